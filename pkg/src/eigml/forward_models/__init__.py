from .base import (
    ForwardModel,
    Gaussian,
    MeshHierarchy,
    NoiseSpec,
    PriorSpec,
    Uniform,
    eval_forward,
    eval_jacobian,
    work_of_level,
)
from .analytic import (
    CallableModel,
    ConstantModel,
    LinearGaussianModel,
    SyntheticLevelModel,
    closed_form_eig,
    make_toy_problem,
)
from .eit import (
    CemSolution,
    EitForwardModel,
    EitModelSpec,
    Electrode,
    effective_sigma_x,
    electrode_flux_gradient,
    electrode_flux_robin,
    four_ply_plate_spec,
    solve_cem,
    solve_cem_full,
)

__all__ = [
    "CallableModel",
    "CemSolution",
    "ConstantModel",
    "EitForwardModel",
    "EitModelSpec",
    "Electrode",
    "ForwardModel",
    "Gaussian",
    "LinearGaussianModel",
    "MeshHierarchy",
    "NoiseSpec",
    "PriorSpec",
    "SyntheticLevelModel",
    "Uniform",
    "closed_form_eig",
    "effective_sigma_x",
    "electrode_flux_gradient",
    "electrode_flux_robin",
    "eval_forward",
    "eval_jacobian",
    "make_toy_problem",
    "four_ply_plate_spec",
    "solve_cem",
    "solve_cem_full",
    "work_of_level",
]
