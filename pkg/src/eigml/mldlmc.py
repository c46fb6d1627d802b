"""Multilevel telescoping of the importance-sampled nested estimator.

The estimator sums level-0 integrand samples and, for each finer level,
differences of the nested estimate computed at consecutive levels with
shared outer draws, a shared proposal fit, and nested inner-sample sets.
A pilot run calibrates the bias and variance constants, from which the
finest level, inner sample count, and per-level outer sample counts are
chosen to meet an error tolerance with prescribed confidence; a short
continuation schedule then refines the variance estimates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .dlmc import EstimatorResult, LevelRecord, OuterSample, log_likelihood
from .errors import (
    EstimatorError,
    EvidenceUnderflowError,
    RateEstimationError,
    ResourceLimitError,
)
from .forward_models.base import ForwardModel, MeshHierarchy, NoiseSpec, PriorSpec
from .laplace import fit_laplace, is_ratio_log, sample_is
from .util import OnlineStats, fit_loglog_slope, substream

_DEGENERATE_KAPPA = 1.0 - 1e-9


@dataclass(frozen=True)
class MlParameters:
    """Resolved estimator parameters for one tolerance."""

    L: int
    kappa: float
    M: tuple  # inner samples per level, length L + 1
    N: tuple  # outer samples per level, length L + 1
    TOL: float
    alpha: float
    C_alpha: float

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if len(self.M) != self.L + 1 or len(self.N) != self.L + 1:
            raise ValueError("M and N must have one entry per level")
        if any(int(m) != m or m < 1 for m in self.M) or any(int(n) != n or n < 1 for n in self.N):
            raise ValueError("M and N entries must be integers >= 1")


def theoretical_variance_bound(M_ell: int, M_prev: int, h_ell: float, eta_s: float, eta_w: float) -> float:
    """Unit-constant variance model for one telescoped difference.

    Reduces to h**(2 eta_s)/M + h**(2 eta_w) when the inner sample counts
    agree, which is the cancellation the constant-M policy exploits.
    """
    if M_prev > M_ell:
        raise ValueError("M_prev must not exceed M_ell")
    inner = (
        M_ell * (1.0 / M_ell - 1.0 / M_prev) ** 2
        + h_ell ** (2.0 * eta_s) / M_prev
        + (M_ell - M_prev) / M_prev**2
    )
    return inner + h_ell ** (2.0 * eta_w)


def _f_hat_from_terms(log_lik_num: float, terms: np.ndarray, M: int) -> float:
    if np.all(np.isneginf(terms[:M])):
        raise EvidenceUnderflowError("all inner samples carried zero mass")
    return log_lik_num - float(logsumexp(terms[:M]) - np.log(M))


@dataclass
class DeltaDetails:
    """Introspection record for coupling tests."""

    value: float
    fine_value: float
    coarse_value: float | None
    fit: object
    inner_thetas: np.ndarray
    outer: OuterSample


def delta_f_sample(
    model: ForwardModel,
    ell: int,
    outer: OuterSample,
    M_ell: int,
    M_prev: int,
    rng: np.random.Generator,
    prior: PriorSpec,
    noise: NoiseSpec,
    map_gtol: float = 1e-8,
    return_details: bool = False,
    couple: bool = True,
):
    """One telescoped-difference sample at level ``ell``.

    For ell = 0 this is the plain integrand sample.  For ell > 0 the fine
    and coarse terms share the outer draw, the proposal fitted to the
    fine-level data, and the first M_prev inner samples; only the model
    level at which data and inner likelihoods are computed differs.  With
    ``couple=False`` the coarse term is skipped, giving the single-level
    integrand sample at ``ell`` with the same stream layout.
    """
    if ell > 0 and couple and M_prev > M_ell:
        raise ValueError("M_prev must not exceed M_ell")
    Y_f = outer.data_at_level(model, ell)
    fit = fit_laplace(model, ell, Y_f, noise, prior, outer.theta_n, gtol=map_gtol)
    thetas = sample_is(fit, M_ell, rng)
    log_r = np.array([is_ratio_log(prior, fit, th) for th in thetas])

    def terms_at(level, Y, count):
        out = np.full(count, -np.inf)
        for m in range(count):
            if log_r[m] == -np.inf:
                continue
            g = model.evaluate(thetas[m], level)
            out[m] = log_likelihood(Y, g, noise) + log_r[m]
        return out

    terms_f = terms_at(ell, Y_f, M_ell)
    f_fine = _f_hat_from_terms(log_likelihood(Y_f, outer.model_output(model, ell), noise), terms_f, M_ell)
    if ell == 0 or not couple:
        value, f_coarse = f_fine, None
    else:
        Y_c = outer.data_at_level(model, ell - 1)
        terms_c = terms_at(ell - 1, Y_c, M_prev)
        f_coarse = _f_hat_from_terms(
            log_likelihood(Y_c, outer.model_output(model, ell - 1), noise), terms_c, M_prev
        )
        value = f_fine - f_coarse
    if return_details:
        return DeltaDetails(value, f_fine, f_coarse, fit, thetas, outer)
    return value


@dataclass
class PilotEstimates:
    """Calibrated constants and per-level statistics from the pilot.

    ``C1`` scales the inner-sample-count sensitivity of the *telescoped*
    estimator (coupled coarse terms included); ``C1_single`` that of the
    plain single-level integrand at the finest pilot level.  The two can
    differ in both size and sign direction, so each driver uses its own.
    """

    C1: float
    C2: float
    eta_w: float
    eta_s: float
    V: tuple  # per-level variance at M = M_small
    E: tuple  # per-level mean at M = M_large
    V_large: tuple
    C3: float
    C4: float
    C1_single: float
    eta_s_data: float  # strong rate of the raw model differences
    L_pilot: int
    N_pilot: int
    M_small: int
    M_large: int


def pilot_run(
    model: ForwardModel,
    L_pilot: int,
    N_pilot: int,
    seed: int,
    prior: PriorSpec,
    noise: NoiseSpec,
    M_small: int = 1,
    M_large: int = 10,
    map_gtol: float = 1e-8,
) -> PilotEstimates:
    """Two coupled pilot passes estimating the bias/variance constants.

    Both passes reuse identical outer draws and nested inner-sample sets;
    only the inner count differs.  The weak constant and rate come from
    the decay of the level means, the inner-bias constant from the shift
    between the two passes, and the strong rate from the variance decay.
    """
    if M_small >= M_large:
        raise ValueError("M_small must be < M_large")
    stats_s = [OnlineStats() for _ in range(L_pilot + 1)]
    stats_l = [OnlineStats() for _ in range(L_pilot + 1)]
    fine_s = [OnlineStats() for _ in range(L_pilot + 1)]
    fine_l = [OnlineStats() for _ in range(L_pilot + 1)]
    gdiff_sq = [OnlineStats() for _ in range(L_pilot + 1)]
    all_zero = True
    for ell in range(L_pilot + 1):
        drawn = 0
        rejected = 0
        while stats_l[ell].n < N_pilot:
            if rejected > max(2, N_pilot):
                raise EstimatorError(f"pilot rejected {rejected} samples at level {ell}")
            rng = substream(seed, 1, ell, drawn)
            drawn += 1
            outer = OuterSample.draw(prior, noise, rng)
            Y_f = outer.data_at_level(model, ell)
            fit = fit_laplace(model, ell, Y_f, noise, prior, outer.theta_n, gtol=map_gtol)
            thetas = sample_is(fit, M_large, rng)
            log_r = np.array([is_ratio_log(prior, fit, th) for th in thetas])

            def terms_at(level, Y):
                out = np.full(M_large, -np.inf)
                gs = {}
                for m in range(M_large):
                    if log_r[m] == -np.inf:
                        continue
                    gs[m] = model.evaluate(thetas[m], level)
                    out[m] = log_likelihood(Y, gs[m], noise) + log_r[m]
                return out, gs

            try:
                terms_f, g_fine = terms_at(ell, Y_f)
                num_f = log_likelihood(Y_f, outer.model_output(model, ell), noise)
                f_f_l = _f_hat_from_terms(num_f, terms_f, M_large)
                f_f_s = _f_hat_from_terms(num_f, terms_f, M_small)
                if ell == 0:
                    d_l, d_s = f_f_l, f_f_s
                else:
                    Y_c = outer.data_at_level(model, ell - 1)
                    terms_c, g_coarse = terms_at(ell - 1, Y_c)
                    num_c = log_likelihood(Y_c, outer.model_output(model, ell - 1), noise)
                    d_l = f_f_l - _f_hat_from_terms(num_c, terms_c, M_large)
                    d_s = f_f_s - _f_hat_from_terms(num_c, terms_c, M_small)
                    for m in g_fine:
                        if m in g_coarse:
                            diff = g_fine[m] - g_coarse[m]
                            gdiff_sq[ell].push(float(np.sum(diff * diff / noise.var)))
            except EvidenceUnderflowError:
                rejected += 1
                continue
            if ell > 0 and (d_l != 0.0 or d_s != 0.0):
                all_zero = False
            stats_l[ell].push(d_l)
            stats_s[ell].push(d_s)
            fine_l[ell].push(f_f_l)
            fine_s[ell].push(f_f_s)
    if L_pilot >= 1 and all_zero:
        raise RateEstimationError(
            "every telescoped difference is exactly zero: the model output is level-independent",
            degenerate=True,
        )
    hier = model.hierarchy
    hs = np.array([hier.h(ell) for ell in range(1, L_pilot + 1)])
    abs_E = np.array([abs(stats_l[ell].mean) for ell in range(1, L_pilot + 1)])
    try:
        eta_w_hat, intercept = fit_loglog_slope(hs, abs_E)
    except ValueError as exc:
        raise RateEstimationError(f"level-mean decay fit failed: {exc}") from exc
    if eta_w_hat <= 0:
        raise RateEstimationError(
            f"level means do not decay (fitted rate {eta_w_hat:.3g}); raise L_pilot"
        )
    r = float(hier.beta) ** (-eta_w_hat)
    C2 = math.exp(intercept) * r / (1.0 - r)

    # sensitivity of the whole telescoped sum to the inner count; the sign
    # depends on how coupled-term mismatches stack, so take the magnitude
    shift = sum(stats_s[ell].mean - stats_l[ell].mean for ell in range(L_pilot + 1))
    C1 = abs(shift) / (1.0 / M_small - 1.0 / M_large)
    shifts_single = [fine_s[ell].mean - fine_l[ell].mean for ell in range(L_pilot + 1)]
    C1_single = max(0.0, max(abs(s) for s in shifts_single[-2:])) / (1.0 / M_small - 1.0 / M_large)

    V_small = np.array([stats_s[ell].var for ell in range(L_pilot + 1)])
    try:
        slope_v, _ = fit_loglog_slope(hs, V_small[1:])
        eta_s_hat = 0.5 * slope_v if slope_v > 0 else eta_w_hat
    except ValueError:
        eta_s_hat = eta_w_hat
    try:
        gd = np.array([gdiff_sq[ell].mean for ell in range(1, L_pilot + 1)])
        slope_g, _ = fit_loglog_slope(hs, gd)
        eta_s_data = 0.5 * slope_g if slope_g > 0 else eta_s_hat
    except ValueError:
        eta_s_data = eta_s_hat

    C4 = max((stats_s[0].var - stats_l[0].var) / (1.0 / M_small - 1.0 / M_large), 0.0)
    C3 = max(stats_s[0].var - C4 / M_small, 0.0)
    return PilotEstimates(
        C1=C1,
        C2=C2,
        eta_w=eta_w_hat,
        eta_s=eta_s_hat,
        V=tuple(V_small),
        E=tuple(stats_l[ell].mean for ell in range(L_pilot + 1)),
        V_large=tuple(stats_l[ell].var for ell in range(L_pilot + 1)),
        C3=C3,
        C4=C4,
        C1_single=C1_single,
        eta_s_data=eta_s_data,
        L_pilot=L_pilot,
        N_pilot=N_pilot,
        M_small=M_small,
        M_large=M_large,
    )


def _extend_variances(V, L, M, hierarchy: MeshHierarchy, eta_s: float, eta_w: float):
    """Fill variance estimates out to level L with the model-bound shape."""
    V = list(V)[: L + 1]
    if not V:
        raise ValueError("need at least the level-0 variance")
    while len(V) <= L:
        ell = len(V)
        ref = len(V) - 1
        bound_new = theoretical_variance_bound(M, M, hierarchy.h(ell), eta_s, eta_w)
        if ref == 0:
            # no coupled level measured yet: seed from the level-0 spread
            V.append(max(V[0] * bound_new, 0.0))
        else:
            bound_ref = theoretical_variance_bound(M, M, hierarchy.h(ref), eta_s, eta_w)
            V.append(max(V[ref] * bound_new / bound_ref, 0.0))
    return V


def select_parameters(
    TOL: float,
    alpha: float,
    C1: float,
    C2: float,
    eta_w: float,
    hierarchy: MeshHierarchy,
    V,
    M_policy: str = "constant",
    eta_s: float | None = None,
    M_cap: int = 1_000_000,
    M_override: int | None = None,
    M_floor: int = 1,
) -> MlParameters:
    """Work-minimizing estimator parameters for a target tolerance.

    The finest level takes the geometric bias to at most half the bias
    budget, the balance parameter assigns the remainder to the statistical
    error, and the inner count caps the nested-sampling bias.  Outer
    counts follow the variance-constrained allocation; missing variance
    entries are extrapolated from the last measured level.
    """
    if TOL <= 0:
        raise ValueError("TOL must be positive")
    if C1 < 0 or C2 <= 0 or eta_w <= 0:
        raise ValueError("constants must be positive (C1 may be zero)")
    eta_s = eta_w if eta_s is None else eta_s
    beta = float(hierarchy.beta)
    L = math.ceil((math.log(2.0 * C2 * hierarchy.h0**eta_w, beta) + math.log(1.0 / TOL, beta)) / eta_w)
    L = max(L, 0)
    for _ in range(200):
        kappa = 1.0 - C2 * hierarchy.h(L) ** eta_w / TOL
        if 0.0 < kappa < 1.0:
            break
        L += 1
    else:
        raise EstimatorError("could not bring the balance parameter into (0, 1)")
    kappa = min(kappa, 1.0 - 1e-12)
    M_L = max(max(1, int(M_floor)), math.ceil(C1 / ((1.0 - kappa) * TOL)))
    if M_override is not None:
        M_L = max(1, int(M_override))
    if M_L > M_cap:
        raise EstimatorError(f"selected inner count {M_L} exceeds cap {M_cap}")
    if M_policy == "constant" or M_override is not None:
        M = [M_L] * (L + 1)
    elif M_policy == "optimized":
        M = _optimize_inner_counts(L, M_L, hierarchy, eta_s, eta_w)
    else:
        raise ValueError(f"unknown M policy {M_policy!r}")

    V_full = _extend_variances(V, L, M_L, hierarchy, eta_s, eta_w)
    c_alpha = float(norm.ppf(1.0 - alpha / 2.0))
    W = [hierarchy.work(ell) for ell in range(L + 1)]
    total = sum(math.sqrt(V_full[ell] * M[ell] * W[ell]) for ell in range(L + 1))
    N = []
    for ell in range(L + 1):
        if V_full[ell] <= 0.0 or total == 0.0:
            N.append(1)
            continue
        n = (c_alpha / (kappa * TOL)) ** 2 * math.sqrt(V_full[ell] / (M[ell] * W[ell])) * total
        N.append(max(1, math.ceil(n)))
    return MlParameters(L=L, kappa=kappa, M=tuple(M), N=tuple(N), TOL=TOL, alpha=alpha, C_alpha=c_alpha)


def _optimize_inner_counts(L, M_L, hierarchy, eta_s, eta_w):
    """Coordinate search over non-decreasing inner counts below level L.

    Minimizes the work-bound shape sum_l sqrt(Vbound_l M_l W_l) using the
    unit-constant variance model; a rough but deterministic alternative to
    the constant policy.
    """
    M = [M_L] * (L + 1)
    if L == 0 or M_L == 1:
        return M

    def bound_work(Ms):
        tot = math.sqrt(Ms[0] * hierarchy.work(0))
        for ell in range(1, L + 1):
            v = theoretical_variance_bound(Ms[ell], Ms[ell - 1], hierarchy.h(ell), eta_s, eta_w)
            tot += math.sqrt(max(v, 0.0) * Ms[ell] * hierarchy.work(ell))
        return tot**2 + sum(Ms[ell] * hierarchy.work(ell) for ell in range(L + 1))

    for _ in range(2):
        for ell in range(L):
            lo = 1 if ell == 0 else M[ell - 1]
            hi = M[ell + 1]
            best = min(range(lo, hi + 1), key=lambda m: bound_work(M[:ell] + [m] + M[ell + 1 :]))
            M[ell] = best
    return M


@dataclass
class LevelStats:
    """Online per-level accumulator: telescoped-difference mean/variance,
    draw counter (for substream indexing), and rejection tally."""

    stats: OnlineStats = field(default_factory=OnlineStats)
    drawn: int = 0
    rejected: int = 0


def _extend_level(model, ell, state, target_N, M_ell, M_prev, seed, prior, noise, map_gtol, tag=0,
                  couple=True):
    while state.stats.n < target_N:
        rng = substream(seed, tag, ell, state.drawn)
        state.drawn += 1
        outer = OuterSample.draw(prior, noise, rng)
        try:
            d = delta_f_sample(model, ell, outer, M_ell, M_prev, rng, prior, noise,
                               map_gtol=map_gtol, couple=couple)
        except EvidenceUnderflowError:
            state.rejected += 1
            if state.rejected > max(1, math.ceil(0.01 * target_N)):
                raise EstimatorError(
                    f"more than 1% of outer samples rejected at level {ell}"
                ) from None
            continue
        state.stats.push(d)


def _assemble_result(model, counts0, states, params, bias_est, seed, t0, extra):
    counts1 = model.snapshot_counts()
    per_level_evals = {
        l: counts1[l] - counts0.get(l, 0) for l in counts1 if counts1[l] - counts0.get(l, 0) > 0
    }
    total_work = sum(c * model.work(l) for l, c in per_level_evals.items())
    levels = sorted(set(per_level_evals) | set(states))
    records = []
    for l in levels:
        st = states.get(l)
        evals = per_level_evals.get(l, 0)
        records.append(
            LevelRecord(
                level=l,
                N=st.stats.n if st else 0,
                M=params.M[l] if st and l <= params.L else 0,
                E=st.stats.mean if st else 0.0,
                V=st.stats.var if st else 0.0,
                evals=evals,
                work=evals * model.work(l),
            )
        )
    value = sum(states[l].stats.mean for l in states if l <= params.L)
    var_est = sum(states[l].stats.var / states[l].stats.n for l in states if l <= params.L)
    return EstimatorResult(
        value=value,
        stat_error=params.C_alpha * math.sqrt(max(var_est, 0.0)),
        bias_est=bias_est,
        per_level=records,
        total_work=total_work,
        wall_time=time.perf_counter() - t0,
        seed=seed,
        extra=extra,
    )


def mldlmc_run_fixed(
    model: ForwardModel,
    params: MlParameters,
    seed: int,
    prior: PriorSpec,
    noise: NoiseSpec,
    map_gtol: float = 1e-8,
) -> EstimatorResult:
    """Run the telescoped estimator with explicitly fixed parameters."""
    t0 = time.perf_counter()
    counts0 = model.snapshot_counts()
    states = {ell: LevelStats() for ell in range(params.L + 1)}
    for ell in range(params.L + 1):
        M_prev = params.M[ell - 1] if ell > 0 else params.M[ell]
        _extend_level(model, ell, states[ell], params.N[ell], params.M[ell], M_prev, seed, prior, noise, map_gtol)
    extra = {"params": _params_dict(params), "mode": "fixed"}
    return _assemble_result(model, counts0, states, params, float("nan"), seed, t0, extra)


def _params_dict(params: MlParameters) -> dict:
    return {
        "L": params.L,
        "kappa": params.kappa,
        "M": list(params.M),
        "N": list(params.N),
        "TOL": params.TOL,
        "alpha": params.alpha,
        "C_alpha": params.C_alpha,
    }


def mldlmc_estimate(
    model: ForwardModel,
    TOL: float,
    alpha: float,
    seed: int,
    prior: PriorSpec,
    noise: NoiseSpec,
    pilot: PilotEstimates | None = None,
    pilot_levels: int | None = None,
    pilot_samples: int = 10,
    max_level: int | None = None,
    M_policy: str = "constant",
    map_gtol: float = 1e-8,
    continuation: tuple = (4.0, 2.0, 1.0),
    max_extra_passes: int = 5,
    params: MlParameters | None = None,
    M_floor: int = 1,
) -> EstimatorResult:
    """Tolerance-driven multilevel estimate of the information gain.

    Runs (or reuses) a pilot, selects parameters, then works through a
    decreasing tolerance schedule, re-estimating level variances from the
    accumulated samples and topping up outer counts each pass.  The final
    sample allocation satisfies the variance constraint for the requested
    tolerance; the remaining budget covers the modeled bias.

    A model whose pilot differences are *exactly* zero at every coupled
    level is level-independent; the estimator then collapses to the
    single coarsest level with the whole tolerance assigned to the
    statistical error.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if params is not None:
        return mldlmc_run_fixed(model, params, seed, prior, noise, map_gtol=map_gtol)
    t0 = time.perf_counter()
    counts0 = model.snapshot_counts()
    max_level = model.max_level if max_level is None else max_level
    c_alpha = float(norm.ppf(1.0 - alpha / 2.0))

    if pilot is None:
        L_pilot = pilot_levels if pilot_levels is not None else min(3, max_level)
        try:
            pilot = pilot_run(model, L_pilot, pilot_samples, seed, prior, noise, map_gtol=map_gtol)
        except RateEstimationError as exc:
            if not exc.degenerate:
                raise
            pilot = None  # level-independent model: single-level path

    states: dict[int, LevelStats] = {}
    if pilot is None:
        kappa = _DEGENERATE_KAPPA
        states[0] = LevelStats()
        budget = (kappa * TOL / c_alpha) ** 2
        _extend_level(model, 0, states[0], 8, 1, 1, seed, prior, noise, map_gtol)
        for _ in range(max_extra_passes + 3):
            st = states[0].stats
            if st.var / st.n <= budget:
                break
            target = max(st.n + 1, math.ceil(st.var / budget))
            _extend_level(model, 0, states[0], target, 1, 1, seed, prior, noise, map_gtol)
        else:
            raise EstimatorError("variance constraint not met within the pass budget")
        params_eff = MlParameters(
            L=0, kappa=kappa, M=(1,), N=(states[0].stats.n,), TOL=TOL, alpha=alpha, C_alpha=c_alpha
        )
        extra = {"params": _params_dict(params_eff), "mode": "degenerate-single-level"}
        return _assemble_result(model, counts0, states, params_eff, 0.0, seed, t0, extra)

    def measured_variances(L):
        out = []
        for ell in range(L + 1):
            st = states.get(ell)
            if st is not None and st.stats.n >= 5:
                out.append(st.stats.var)
            elif ell < len(pilot.V) and pilot.N_pilot >= 5:
                out.append(pilot.V[ell])
            else:
                break
        return out if out else [pilot.V[0]]

    sel_final = select_parameters(
        TOL, alpha, pilot.C1, pilot.C2, pilot.eta_w, model.hierarchy,
        measured_variances(max_level), M_policy, eta_s=pilot.eta_s, M_floor=M_floor,
    )
    if sel_final.L > max_level:
        raise ResourceLimitError(
            f"tolerance {TOL:g} needs level {sel_final.L} > configured maximum {max_level}"
        )
    # The inner count follows from (C1, C2, eta_w, TOL) alone; pinning it
    # from the final tolerance keeps samples valid across all passes.
    M_star = sel_final.M[-1] if M_policy == "constant" else None

    schedule = [f * TOL for f in continuation] + [TOL] * max_extra_passes
    params_eff = None
    prev_M = None
    for i, tol_k in enumerate(schedule):
        probe = select_parameters(
            tol_k, alpha, pilot.C1, pilot.C2, pilot.eta_w, model.hierarchy,
            measured_variances(max_level), M_policy, eta_s=pilot.eta_s, M_override=M_star,
        )
        if probe.L > max_level:
            raise ResourceLimitError(
                f"tolerance {tol_k:g} needs level {probe.L} > configured maximum {max_level}"
            )
        params_eff = probe
        if prev_M is not None and tuple(probe.M)[: len(prev_M)] != prev_M[: len(probe.M)]:
            states.clear()  # inner count changed: accumulated statistics no longer match
        prev_M = tuple(probe.M)
        for ell in range(probe.L + 1):
            states.setdefault(ell, LevelStats())
            M_prev = probe.M[ell - 1] if ell > 0 else probe.M[ell]
            _extend_level(model, ell, states[ell], probe.N[ell], probe.M[ell], M_prev, seed, prior, noise, map_gtol)
        if i >= len(continuation) - 1:
            var_est = sum(states[l].stats.var / states[l].stats.n for l in range(probe.L + 1))
            if var_est <= (probe.kappa * TOL / probe.C_alpha) ** 2:
                break
    else:
        raise EstimatorError("variance constraint not met within the continuation budget")

    bias_est = pilot.C2 * model.hierarchy.h(params_eff.L) ** pilot.eta_w + pilot.C1 / params_eff.M[-1]
    extra = {
        "params": _params_dict(params_eff),
        "mode": "continuation",
        "pilot": {
            "C1": pilot.C1, "C2": pilot.C2, "eta_w": pilot.eta_w, "eta_s": pilot.eta_s,
            "C3": pilot.C3, "C4": pilot.C4,
        },
        "rejected": {l: s.rejected for l, s in states.items() if s.rejected},
    }
    drop = [l for l in states if l > params_eff.L]
    for l in drop:
        del states[l]
    return _assemble_result(model, counts0, states, params_eff, bias_est, seed, t0, extra)


def dlmcis_estimate(
    model: ForwardModel,
    TOL: float,
    alpha: float,
    seed: int,
    prior: PriorSpec,
    noise: NoiseSpec,
    pilot: PilotEstimates | None = None,
    pilot_levels: int | None = None,
    pilot_samples: int = 10,
    max_level: int | None = None,
    map_gtol: float = 1e-8,
    max_rounds: int = 8,
    M_floor: int = 1,
) -> EstimatorResult:
    """Single-level importance-sampled estimator driven to a tolerance.

    Uses the same bias calibration as the multilevel driver to pick the
    working level and inner count, then grows the outer sample count until
    the variance constraint holds.  Serves as the single-level baseline
    the multilevel estimator is measured against.
    """
    t0 = time.perf_counter()
    counts0 = model.snapshot_counts()
    max_level = model.max_level if max_level is None else max_level
    c_alpha = float(norm.ppf(1.0 - alpha / 2.0))
    if pilot is None:
        L_pilot = pilot_levels if pilot_levels is not None else min(3, max_level)
        try:
            pilot = pilot_run(model, L_pilot, pilot_samples, seed, prior, noise, map_gtol=map_gtol)
        except RateEstimationError as exc:
            if not exc.degenerate:
                raise
            pilot = None
    if pilot is None:
        L, kappa, M = 0, _DEGENERATE_KAPPA, 1
        bias_est = 0.0
    else:
        sel = select_parameters(
            TOL, alpha, pilot.C1_single, pilot.C2, pilot.eta_w, model.hierarchy, list(pilot.V),
            M_floor=M_floor,
        )
        L, kappa, M = sel.L, sel.kappa, sel.M[-1]
        if L > max_level:
            raise ResourceLimitError(f"tolerance {TOL:g} needs level {L} > maximum {max_level}")
        bias_est = pilot.C2 * model.hierarchy.h(L) ** pilot.eta_w + pilot.C1_single / M

    budget = (kappa * TOL / c_alpha) ** 2
    state = LevelStats()
    _extend_level(model, L, state, 16, M, M, seed, prior, noise, map_gtol, couple=False)
    for _ in range(max_rounds):
        st = state.stats
        if st.var / st.n <= budget:
            break
        target = max(st.n + 1, math.ceil(st.var / budget))
        _extend_level(model, L, state, target, M, M, seed, prior, noise, map_gtol, couple=False)
    else:
        raise EstimatorError("variance constraint not met within the round budget")

    params_eff = MlParameters(
        L=L, kappa=kappa, M=tuple([M] * (L + 1)), N=tuple([1] * L + [state.stats.n]),
        TOL=TOL, alpha=alpha, C_alpha=c_alpha,
    )
    states = {L: state}
    extra = {"params": _params_dict(params_eff), "mode": "single-level", "level": L}
    result = _assemble_result(model, counts0, states, params_eff, bias_est, seed, t0, extra)
    return result


def level_decay_study(
    model: ForwardModel,
    levels,
    N: int,
    M: int,
    seed: int,
    prior: PriorSpec,
    noise: NoiseSpec,
    map_gtol: float = 1e-8,
):
    """Means and variances of the telescoped differences per level.

    Independent of estimator runs (separate substream tag); used for the
    decay-rate diagnostics.
    """
    out = []
    for ell in levels:
        state = LevelStats()
        _extend_level(model, ell, state, N, M, M, seed, prior, noise, map_gtol, tag=2)
        out.append((ell, state.stats.mean, state.stats.var, state.stats.n))
    return out
