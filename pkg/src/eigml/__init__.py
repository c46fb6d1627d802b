"""Estimators of expected information gain for simulation-based
Bayesian experimental design.

Two tolerance-driven multilevel estimators are provided -- a nested Monte
Carlo telescope (``mldlmc_estimate``) and a deterministic sparse-grid
collocation scheme (``mldlsc_estimate``) -- plus their single-level
counterparts, all accelerated by Laplace-based importance sampling of the
inner evidence integral.  Forward models include a closed-form
linear-Gaussian oracle, a synthetic-rate toy, and a 2-D finite-element
electrical impedance tomography model.
"""

from .dlmc import (
    EstimatorResult,
    LevelRecord,
    OuterSample,
    dlmc_estimate,
    estimate_log_evidence_is,
    f_hat,
    log_likelihood,
)
from .errors import (
    ConfigError,
    DecompositionError,
    DomainError,
    EigmlError,
    EstimatorError,
    EvidenceUnderflowError,
    HessianNotSPDError,
    IndexSetError,
    LevelRangeError,
    MapConvergenceError,
    RateEstimationError,
    ResourceLimitError,
)
from .forward_models import (
    CallableModel,
    ConstantModel,
    EitForwardModel,
    EitModelSpec,
    Electrode,
    ForwardModel,
    Gaussian,
    LinearGaussianModel,
    MeshHierarchy,
    NoiseSpec,
    PriorSpec,
    SyntheticLevelModel,
    Uniform,
    closed_form_eig,
    effective_sigma_x,
    eval_forward,
    eval_jacobian,
    make_toy_problem,
    four_ply_plate_spec,
    solve_cem,
    solve_cem_full,
    work_of_level,
)
from .laplace import (
    LaplaceFit,
    find_map,
    fit_laplace,
    is_log_density,
    is_ratio_log,
    laplace_covariance,
    sample_is,
)
from .mldlmc import (
    LevelStats,
    MlParameters,
    PilotEstimates,
    delta_f_sample,
    dlmcis_estimate,
    level_decay_study,
    mldlmc_estimate,
    mldlmc_run_fixed,
    pilot_run,
    select_parameters,
    theoretical_variance_bound,
)
from .mldlsc import MldlscIndex, f_tilde, mldlsc_estimate, psi
from .sparse_grid import (
    AdaptResult,
    IndexSet,
    QuadratureRule1D,
    adapt_index_set,
    cc_rule,
    combination_estimate,
    gh_rule,
    gl_rule,
    mixed_difference,
    tensor_quadrature,
    transform_gaussian_points,
)

__version__ = "0.1.0"
