"""Closed-form and synthetic forward models.

These serve two purposes: the linear-Gaussian family gives an exact
information-gain oracle against which every estimator is validated, and
the synthetic level wrapper plants known weak/strong convergence rates so
that multilevel machinery can be tested with ground truth.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor

from ..errors import DecompositionError
from .base import ForwardModel, MeshHierarchy, NoiseSpec, PriorSpec

_DEFAULT_HIERARCHY = MeshHierarchy(h0=1.0, beta=2, gamma=1.0, eta_w=1.0, eta_s=1.0)


class LinearGaussianModel(ForwardModel):
    """g(theta) = A @ theta + b, identical at every level."""

    def __init__(self, A, offset=None, hierarchy: MeshHierarchy = _DEFAULT_HIERARCHY, max_level: int = 62):
        super().__init__()
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.dim_output, self.dim_theta = self.A.shape
        self.offset = np.zeros(self.dim_output) if offset is None else np.asarray(offset, dtype=float)
        self.hierarchy = hierarchy
        self.max_level = max_level

    def _evaluate(self, theta, level):
        return self.A @ theta + self.offset

    def jacobian(self, theta, level, step=None):
        self._check_args(np.asarray(theta, dtype=float), level)
        return -self.A.copy()

    def linear_map(self, level):
        return self.A, self.offset


class ConstantModel(ForwardModel):
    """Parameter-independent output; data from it carry no information."""

    def __init__(self, c, dim_theta: int = 1, hierarchy: MeshHierarchy = _DEFAULT_HIERARCHY, max_level: int = 62):
        super().__init__()
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.dim_output = self.c.size
        self.dim_theta = dim_theta
        self.hierarchy = hierarchy
        self.max_level = max_level

    def _evaluate(self, theta, level):
        return self.c.copy()

    def jacobian(self, theta, level, step=None):
        self._check_args(np.asarray(theta, dtype=float), level)
        return np.zeros((self.dim_output, self.dim_theta))

    def linear_map(self, level):
        return np.zeros((self.dim_output, self.dim_theta)), self.c


class CallableModel(ForwardModel):
    """Level-independent model defined by a plain function.

    ``jac`` (if given) must return grad g, shape (q, d); the jacobian
    convention J = -grad g is applied here.
    """

    def __init__(
        self,
        fn,
        dim_theta: int,
        dim_output: int,
        hierarchy: MeshHierarchy = _DEFAULT_HIERARCHY,
        jac=None,
        support=None,
        fd_scale=None,
        max_level: int = 62,
    ):
        super().__init__()
        self.fn = fn
        self.jac_fn = jac
        self.dim_theta = dim_theta
        self.dim_output = dim_output
        self.hierarchy = hierarchy
        self.max_level = max_level
        if support is not None:
            lo, hi = support
            self.support_lower = np.asarray(lo, dtype=float)
            self.support_upper = np.asarray(hi, dtype=float)
        if fd_scale is not None:
            self.fd_scale = np.asarray(fd_scale, dtype=float)

    def _evaluate(self, theta, level):
        return np.atleast_1d(np.asarray(self.fn(theta), dtype=float))

    def jacobian(self, theta, level, step=None):
        if self.jac_fn is None:
            return super().jacobian(theta, level, step=step)
        self._check_args(np.asarray(theta, dtype=float), level)
        return -np.atleast_2d(np.asarray(self.jac_fn(theta), dtype=float))


class SyntheticLevelModel(ForwardModel):
    """Wrap a base model with planted level-dependent affine perturbations.

        g_l(theta) = g(theta) + h_l**eta_w (Ww theta + bw)
                              + h_l**eta_s (Ws theta + bs)

    The first term drives a weak (mean) bias decaying at rate eta_w; the
    second, typically chosen zero-mean under the prior, dominates the
    strong (L2) differences between consecutive levels at rate eta_s.
    """

    def __init__(self, base: ForwardModel, hierarchy: MeshHierarchy, Ww=None, bw=None, Ws=None, bs=None,
                 max_level: int = 62):
        super().__init__()
        self.base = base
        self.hierarchy = hierarchy
        self.dim_theta = base.dim_theta
        self.dim_output = base.dim_output
        self.max_level = max_level
        self.support_lower = base.support_lower
        self.support_upper = base.support_upper
        self.fd_scale = base.fd_scale
        q, d = self.dim_output, self.dim_theta
        self.Ww = np.zeros((q, d)) if Ww is None else np.atleast_2d(np.asarray(Ww, dtype=float))
        self.bw = np.zeros(q) if bw is None else np.atleast_1d(np.asarray(bw, dtype=float))
        self.Ws = np.zeros((q, d)) if Ws is None else np.atleast_2d(np.asarray(Ws, dtype=float))
        self.bs = np.zeros(q) if bs is None else np.atleast_1d(np.asarray(bs, dtype=float))

    def _pert(self, level):
        hw = self.hierarchy.h(level) ** self.hierarchy.eta_w
        hs = self.hierarchy.h(level) ** self.hierarchy.eta_s
        return hw, hs

    def _evaluate(self, theta, level):
        hw, hs = self._pert(level)
        g = self.base._evaluate(theta, level)
        return g + hw * (self.Ww @ theta + self.bw) + hs * (self.Ws @ theta + self.bs)

    def jacobian(self, theta, level, step=None):
        self._check_args(np.asarray(theta, dtype=float), level)
        hw, hs = self._pert(level)
        return self.base.jacobian(theta, level, step=step) - hw * self.Ww - hs * self.Ws

    def linear_map(self, level):
        base_map = self.base.linear_map(level)
        if base_map is None:
            return None
        A, b = base_map
        hw, hs = self._pert(level)
        return A + hw * self.Ww + hs * self.Ws, b + hw * self.bw + hs * self.bs


def closed_form_eig(A, Sigma_theta, Sigma_eps, N_e: int = 1) -> float:
    """Exact information gain of the linear-Gaussian experiment.

    For Y = A theta + eps with theta ~ N(mu, Sigma_theta) and N_e
    independent repetitions of Gaussian noise N(0, Sigma_eps):

        0.5 * logdet(I_d + N_e * A^T Sigma_eps^{-1} A Sigma_theta)
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma_theta = np.atleast_2d(np.asarray(Sigma_theta, dtype=float))
    Sigma_eps = np.atleast_2d(np.asarray(Sigma_eps, dtype=float))
    d = A.shape[1]
    try:
        ce = cho_factor(Sigma_eps)
        # validate SPD of the prior covariance as well
        cho_factor(Sigma_theta)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own type
        raise DecompositionError(str(exc)) from exc
    except Exception as exc:
        raise DecompositionError(f"covariance not SPD: {exc}") from exc
    from scipy.linalg import cho_solve

    M = np.eye(d) + N_e * A.T @ cho_solve(ce, A) @ Sigma_theta
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise DecompositionError("information matrix has non-positive determinant")
    return 0.5 * float(logdet)


def make_toy_problem() -> tuple[SyntheticLevelModel, PriorSpec, NoiseSpec]:
    """Smooth 1-D nonlinear benchmark with planted convergence rates.

    Base map sin(theta) under the prior N(0.7, 0.3**2), observation noise
    variance 0.01, and one planted level term decaying at rate 1.5 on a
    work exponent gamma = 1 hierarchy, so weak and strong rates are both
    1.5.  The unbounded prior keeps single-draw inner loops away from
    zero-mass proposals while still exercising the generic mode search
    (the map is nonlinear).
    """
    hierarchy = MeshHierarchy(h0=1.0, beta=2, gamma=1.0, eta_w=1.5, eta_s=1.5)
    prior = PriorSpec.gaussian([0.7], [0.09])
    noise = NoiseSpec.iso(0.01, q=1, N_e=1)
    base = CallableModel(
        lambda th: np.array([np.sin(th[0])]),
        dim_theta=1,
        dim_output=1,
        hierarchy=hierarchy,
        jac=lambda th: np.array([[np.cos(th[0])]]),
        fd_scale=[1.0],
    )
    model = SyntheticLevelModel(
        base,
        hierarchy,
        Ww=[[0.1]],
        bw=[-0.1 * 0.7],  # centered so the planted term is zero-mean under the prior
        max_level=30,
    )
    return model, prior, noise
