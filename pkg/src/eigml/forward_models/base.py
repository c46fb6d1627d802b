"""Level-discretized forward-model interface and shared problem types.

A forward model maps a parameter vector theta to a deterministic output
vector, at any resolution level of a geometric mesh hierarchy.  Priors and
observation noise are kept separate from the model so the same model can
be reused across experiment definitions.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, LevelRangeError


@dataclass(frozen=True)
class MeshHierarchy:
    """Geometric refinement hierarchy h_l = h0 * beta**(-l).

    Parameters
    ----------
    h0 : float
        Coarsest mesh-element size.
    beta : int
        Refinement factor, at least 2.
    gamma : float
        Work-growth exponent: one evaluation at level l costs
        ``h_l**(-gamma)`` relative work units.
    eta_w, eta_s : float
        Weak and strong convergence rates of the discretization.
    C1, C2 : float
        Inner-sampling and weak-bias constants of the error model.  These
        are placeholders until a pilot run estimates them.
    """

    h0: float
    beta: int = 2
    gamma: float = 1.0
    eta_w: float = 1.0
    eta_s: float = 1.0
    C1: float = 1.0
    C2: float = 1.0

    def __post_init__(self):
        if self.h0 <= 0:
            raise ValueError("h0 must be positive")
        if int(self.beta) != self.beta or self.beta < 2:
            raise ValueError("beta must be an integer >= 2")
        for name in ("gamma", "eta_w", "eta_s", "C1", "C2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def h(self, level: int) -> float:
        if level < 0:
            raise LevelRangeError(f"level must be >= 0, got {level}")
        return self.h0 * float(self.beta) ** (-level)

    def work(self, level: int) -> float:
        return self.h(level) ** (-self.gamma)


def work_of_level(hierarchy: MeshHierarchy, level: int) -> float:
    """Relative cost of one forward evaluation at ``level``."""
    return hierarchy.work(level)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("uniform marginal needs lo < hi")


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("gaussian marginal needs var > 0")


@dataclass(frozen=True)
class PriorSpec:
    """Independent per-dimension prior, each marginal uniform or Gaussian."""

    marginals: tuple

    def __post_init__(self):
        if not self.marginals:
            raise ValueError("prior needs at least one dimension")
        for m in self.marginals:
            if not isinstance(m, (Uniform, Gaussian)):
                raise TypeError(f"unsupported marginal {m!r}")

    @staticmethod
    def uniform_box(lows, highs) -> "PriorSpec":
        return PriorSpec(tuple(Uniform(float(a), float(b)) for a, b in zip(lows, highs, strict=True)))

    @staticmethod
    def gaussian(means, variances) -> "PriorSpec":
        return PriorSpec(tuple(Gaussian(float(m), float(v)) for m, v in zip(means, variances, strict=True)))

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def lower(self) -> np.ndarray:
        return np.array([m.lo if isinstance(m, Uniform) else -np.inf for m in self.marginals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([m.hi if isinstance(m, Uniform) else np.inf for m in self.marginals])

    @property
    def is_gaussian(self) -> bool:
        return all(isinstance(m, Gaussian) for m in self.marginals)

    @property
    def mean(self) -> np.ndarray:
        return np.array(
            [m.mean if isinstance(m, Gaussian) else 0.5 * (m.lo + m.hi) for m in self.marginals]
        )

    def scale(self) -> np.ndarray:
        """Per-dimension length scale: box width, or standard deviation."""
        return np.array(
            [m.hi - m.lo if isinstance(m, Uniform) else np.sqrt(m.var) for m in self.marginals]
        )

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return -np.inf
        total = 0.0
        for t, m in zip(theta, self.marginals):
            if isinstance(m, Uniform):
                total -= np.log(m.hi - m.lo)
            else:
                total += -0.5 * np.log(2.0 * np.pi * m.var) - 0.5 * (t - m.mean) ** 2 / m.var
        return float(total)

    def grad_log_density(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        g = np.zeros_like(theta)
        for i, m in enumerate(self.marginals):
            if isinstance(m, Gaussian):
                g[i] = -(theta[i] - m.mean) / m.var
        return g

    def hess_log_density(self, theta) -> np.ndarray:
        h = np.zeros((self.dim, self.dim))
        for i, m in enumerate(self.marginals):
            if isinstance(m, Gaussian):
                h[i, i] = -1.0 / m.var
        return h

    def sample(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        n = 1 if count is None else int(count)
        out = np.empty((n, self.dim))
        for i, m in enumerate(self.marginals):
            if isinstance(m, Uniform):
                out[:, i] = rng.uniform(m.lo, m.hi, size=n)
            else:
                out[:, i] = m.mean + np.sqrt(m.var) * rng.standard_normal(n)
        return out[0] if count is None else out


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal Gaussian observation noise, repeated over N_e experiments."""

    variances: tuple
    N_e: int = 1

    def __post_init__(self):
        if any(v <= 0 for v in self.variances):
            raise ValueError("noise variances must be positive")
        if self.N_e < 1:
            raise ValueError("N_e must be >= 1")

    @staticmethod
    def iso(var: float, q: int, N_e: int = 1) -> "NoiseSpec":
        return NoiseSpec(tuple([float(var)] * q), N_e)

    @property
    def q(self) -> int:
        return len(self.variances)

    @property
    def var(self) -> np.ndarray:
        return np.asarray(self.variances, dtype=float)

    @property
    def logdet_2pi(self) -> float:
        """log det(2*pi*Sigma_eps) for the per-experiment covariance."""
        return float(np.sum(np.log(2.0 * np.pi * self.var)))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw of the stacked error matrix, shape (N_e, q)."""
        return np.sqrt(self.var) * rng.standard_normal((self.N_e, self.q))

    def log_density(self, eps) -> float:
        eps = np.atleast_2d(np.asarray(eps, dtype=float))
        quad = float(np.sum(eps * eps / self.var))
        return -0.5 * self.N_e * self.logdet_2pi - 0.5 * quad


class ForwardModel(ABC):
    """Deterministic map (theta, level) -> output vector of fixed length.

    Subclasses implement ``_evaluate`` and may override ``jacobian`` with
    an analytic version; the default is central finite differences.  Every
    evaluation is tallied per level in ``eval_counts`` so estimators can
    account work exactly.  The tally makes instances cheap to share but
    not strictly thread-safe; copy per worker for parallel use.
    """

    dim_theta: int
    dim_output: int
    hierarchy: MeshHierarchy
    max_level: int = 62
    # Optional hard evaluation domain (closed box); None means unbounded.
    support_lower: np.ndarray | None = None
    support_upper: np.ndarray | None = None
    # Per-dimension step scale for finite differences.
    fd_scale: np.ndarray | None = None

    def __init__(self):
        self.eval_counts: dict[int, int] = defaultdict(int)

    # -- evaluation ----------------------------------------------------

    def evaluate(self, theta, level: int) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        self._check_args(theta, level)
        self.eval_counts[level] += 1
        out = np.asarray(self._evaluate(theta, level), dtype=float)
        if out.shape != (self.dim_output,):
            raise RuntimeError(f"model returned shape {out.shape}, expected ({self.dim_output},)")
        return out

    @abstractmethod
    def _evaluate(self, theta: np.ndarray, level: int) -> np.ndarray: ...

    def _check_args(self, theta: np.ndarray, level: int) -> None:
        if theta.shape != (self.dim_theta,):
            raise DomainError(f"theta has shape {theta.shape}, expected ({self.dim_theta},)")
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta must be finite")
        if level < 0 or level > self.max_level:
            raise LevelRangeError(f"level {level} outside [0, {self.max_level}]")
        if self.support_lower is not None and np.any(theta < self.support_lower):
            raise DomainError("theta below model support")
        if self.support_upper is not None and np.any(theta > self.support_upper):
            raise DomainError("theta above model support")

    # -- jacobian ------------------------------------------------------

    def jacobian(self, theta, level: int, step: np.ndarray | None = None) -> np.ndarray:
        """Negative gradient of the model output, shape (q, d).

        The sign convention is J = -grad_theta g.  The default
        implementation uses central differences with per-dimension step
        1e-5 times ``fd_scale`` (falling back to max(1, |theta_i|)),
        shrinking once near a support boundary and switching to a
        one-sided stencil when a dimension sits on the boundary itself.
        """
        theta = np.asarray(theta, dtype=float)
        self._check_args(theta, level)
        if step is None:
            scale = self.fd_scale if self.fd_scale is not None else np.maximum(1.0, np.abs(theta))
            step = 1e-5 * np.asarray(scale, dtype=float)
        else:
            step = np.broadcast_to(np.asarray(step, dtype=float), (self.dim_theta,)).copy()
        lo = self.support_lower if self.support_lower is not None else np.full(self.dim_theta, -np.inf)
        hi = self.support_upper if self.support_upper is not None else np.full(self.dim_theta, np.inf)
        grad = np.empty((self.dim_output, self.dim_theta))
        for i in range(self.dim_theta):
            h = step[i]
            room_up = hi[i] - theta[i]
            room_dn = theta[i] - lo[i]
            if room_up < h or room_dn < h:
                h *= 0.5  # shrink once before giving up on a central stencil
            e = np.zeros(self.dim_theta)
            e[i] = h
            if room_up >= h and room_dn >= h:
                gp = self.evaluate(theta + e, level)
                gm = self.evaluate(theta - e, level)
                grad[:, i] = (gp - gm) / (2.0 * h)
            elif room_up >= 2 * h:
                g0 = self.evaluate(theta, level)
                gp = self.evaluate(theta + e, level)
                gpp = self.evaluate(theta + 2 * e, level)
                grad[:, i] = (-3.0 * g0 + 4.0 * gp - gpp) / (2.0 * h)
            elif room_dn >= 2 * h:
                g0 = self.evaluate(theta, level)
                gm = self.evaluate(theta - e, level)
                gmm = self.evaluate(theta - 2 * e, level)
                grad[:, i] = (3.0 * g0 - 4.0 * gm + gmm) / (2.0 * h)
            else:
                raise DomainError(
                    f"difference stencil for dimension {i} exits the support even after shrinking"
                )
        return -grad

    def value_and_jacobian(self, theta, level: int) -> tuple[np.ndarray, np.ndarray]:
        return self.evaluate(theta, level), self.jacobian(theta, level)

    # -- hooks ----------------------------------------------------------

    def linear_map(self, level: int) -> tuple[np.ndarray, np.ndarray] | None:
        """Return (A, b) when g_l(theta) = A @ theta + b, else None."""
        return None

    def work(self, level: int) -> float:
        return self.hierarchy.work(level)

    def reset_counts(self) -> None:
        self.eval_counts.clear()

    def snapshot_counts(self) -> dict[int, int]:
        return dict(self.eval_counts)


def eval_forward(model: ForwardModel, theta, level: int) -> np.ndarray:
    """Evaluate g_level(theta); pure and bit-reproducible."""
    return model.evaluate(theta, level)


def eval_jacobian(model: ForwardModel, theta, level: int, step=None) -> np.ndarray:
    """J_level(theta) = -grad g_level(theta), analytic where available."""
    return model.jacobian(theta, level, step=step)
