"""Single-level nested Monte Carlo estimators of expected information gain.

Each outer sample draws (theta_n, eps_n), synthesizes data at the working
level, and estimates the log evidence with an inner loop -- either prior
sampling or the Laplace-based importance sampling that makes tiny inner
sample counts viable.  All evidence reductions run in log space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .errors import EstimatorError, EvidenceUnderflowError
from .forward_models.base import ForwardModel, NoiseSpec, PriorSpec
from .laplace import LaplaceFit, fit_laplace, is_ratio_log, sample_is
from .util import OnlineStats, substream


def log_likelihood(Y, g, noise: NoiseSpec) -> float:
    """Gaussian log likelihood of stacked data Y (N_e, q) at model output g."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    r = Y - np.asarray(g, dtype=float)
    return -0.5 * noise.N_e * noise.logdet_2pi - 0.5 * float(np.sum(r * r / noise.var))


@dataclass
class OuterSample:
    """One outer draw with its per-level synthetic data, lazily built.

    The same noise realization is shared by the data at every level, which
    is what couples fine and coarse terms of a telescoped difference.
    """

    theta_n: np.ndarray
    eps_n: np.ndarray  # (N_e, q)
    _g: dict = field(default_factory=dict)

    def model_output(self, model: ForwardModel, level: int) -> np.ndarray:
        if level not in self._g:
            self._g[level] = model.evaluate(self.theta_n, level)
        return self._g[level]

    def data_at_level(self, model: ForwardModel, level: int) -> np.ndarray:
        return self.model_output(model, level)[None, :] + self.eps_n

    @staticmethod
    def draw(prior: PriorSpec, noise: NoiseSpec, rng: np.random.Generator) -> "OuterSample":
        theta = prior.sample(rng)
        eps = noise.sample(rng)
        return OuterSample(theta_n=theta, eps_n=eps)


@dataclass
class LevelRecord:
    level: int
    N: int
    M: int
    E: float
    V: float
    evals: int
    work: float


@dataclass
class EstimatorResult:
    value: float
    stat_error: float
    bias_est: float
    per_level: list
    total_work: float
    wall_time: float
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "value": self.value,
            "stat_error": self.stat_error,
            "bias_est": None if np.isnan(self.bias_est) else self.bias_est,
            "per_level": [vars(r) for r in self.per_level],
            "total_work": self.total_work,
            "seed": self.seed,
            "extra": self.extra,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d


def _evidence_terms(model, level, Y, noise, prior, thetas, fit: LaplaceFit | None):
    """Log of p(Y | theta_m) * R_m for each inner sample.

    With a proposal fit, out-of-support draws carry exactly zero mass and
    the model is never evaluated there.
    """
    out = np.empty(len(thetas))
    for m, th in enumerate(thetas):
        if fit is not None:
            log_r = is_ratio_log(prior, fit, th)
            if log_r == -np.inf:
                out[m] = -np.inf
                continue
        else:
            log_r = 0.0
        g = model.evaluate(th, level)
        out[m] = log_likelihood(Y, g, noise) + log_r
    return out


def estimate_log_evidence_is(
    model: ForwardModel,
    level: int,
    Y,
    fit: LaplaceFit,
    M: int,
    rng: np.random.Generator,
    prior: PriorSpec,
    noise: NoiseSpec,
) -> float:
    """Importance-sampled log evidence with an M-sample inner loop."""
    if M < 1:
        raise ValueError("M must be >= 1")
    thetas = sample_is(fit, M, rng)
    terms = _evidence_terms(model, level, Y, noise, prior, thetas, fit)
    if np.all(np.isneginf(terms)):
        raise EvidenceUnderflowError("all inner samples fell outside the prior support")
    return float(logsumexp(terms) - np.log(M))


def f_hat(
    model: ForwardModel,
    level: int,
    Y,
    theta,
    fit: LaplaceFit,
    M: int,
    rng: np.random.Generator,
    prior: PriorSpec,
    noise: NoiseSpec,
) -> float:
    """One integrand sample: log likelihood at theta minus estimated log evidence."""
    g = model.evaluate(theta, level)
    return log_likelihood(Y, g, noise) - estimate_log_evidence_is(
        model, level, Y, fit, M, rng, prior, noise
    )


def _work_from_counts(model, counts_before, counts_after):
    per_level = {}
    for level, n in counts_after.items():
        d = n - counts_before.get(level, 0)
        if d:
            per_level[level] = d
    total = sum(n * model.work(level) for level, n in per_level.items())
    return per_level, total


def dlmc_estimate(
    model: ForwardModel,
    level: int,
    N: int,
    M: int,
    use_is: bool,
    seed: int,
    prior: PriorSpec,
    noise: NoiseSpec,
    alpha: float = 0.05,
    map_gtol: float = 1e-8,
) -> EstimatorResult:
    """Fixed-size nested Monte Carlo estimate at one discretization level.

    With ``use_is`` the inner loop samples the per-datum Laplace proposal;
    without it the prior itself, which needs far more inner samples for
    the same inner bias.  Outer samples whose evidence estimate carries no
    mass are rejected; more than 1% rejections aborts the run.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be >= 1")
    t0 = time.perf_counter()
    counts0 = model.snapshot_counts()
    c_alpha = float(norm.ppf(1.0 - alpha / 2.0))
    stats = OnlineStats()
    rejected = 0
    for n in range(N):
        rng = substream(seed, 0, level, n)
        outer = OuterSample.draw(prior, noise, rng)
        Y = outer.data_at_level(model, level)
        try:
            if use_is:
                fit = fit_laplace(model, level, Y, noise, prior, outer.theta_n, gtol=map_gtol)
                thetas = sample_is(fit, M, rng)
                terms = _evidence_terms(model, level, Y, noise, prior, thetas, fit)
            else:
                thetas = prior.sample(rng, M)
                terms = _evidence_terms(model, level, Y, noise, prior, thetas, None)
            if np.all(np.isneginf(terms)):
                raise EvidenceUnderflowError("all inner samples carried zero mass")
        except EvidenceUnderflowError:
            rejected += 1
            if rejected > max(1, 0.01 * N):
                raise EstimatorError(
                    f"{rejected} of {n + 1} outer samples rejected for evidence underflow"
                ) from None
            continue
        log_ev = float(logsumexp(terms) - np.log(M))
        g_n = outer.model_output(model, level)
        stats.push(log_likelihood(Y, g_n, noise) - log_ev)
    if stats.n == 0:
        raise EstimatorError("all outer samples were rejected")
    per_level_counts, total_work = _work_from_counts(model, counts0, model.snapshot_counts())
    records = [
        LevelRecord(level=l, N=stats.n if l == level else 0, M=M if l == level else 0,
                    E=stats.mean if l == level else 0.0, V=stats.var if l == level else 0.0,
                    evals=c, work=c * model.work(l))
        for l, c in sorted(per_level_counts.items())
    ]
    return EstimatorResult(
        value=stats.mean,
        stat_error=c_alpha * float(np.sqrt(stats.var / stats.n)),
        bias_est=float("nan"),
        per_level=records,
        total_work=total_work,
        wall_time=time.perf_counter() - t0,
        seed=seed,
        extra={"rejected": rejected, "use_is": use_is, "level": level, "N": N, "M": M},
    )
