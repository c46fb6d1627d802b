"""Deterministic quadrature: nested 1-D rules, tensorization, difference
operators over downward-closed multi-index sets, and greedy dimension
adaptivity.

Multi-indices are plain tuples.  Stochastic directions have level floor 1
(one quadrature point); a leading physical-discretization entry, when
present, has floor 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.linalg import cholesky

from .errors import DecompositionError, IndexSetError


@dataclass(frozen=True)
class QuadratureRule1D:
    """Points and weights of one 1-D rule.

    ``weights`` integrate against the raw measure (total 2 on [-1, 1] for
    Clenshaw-Curtis and Gauss-Legendre, 1 for the probabilists' Hermite
    rule); ``prob_weights`` are normalized to a probability measure so
    tensor products of them are probability weights.
    """

    family: str
    level: int
    points: np.ndarray
    weights: np.ndarray
    measure: float

    @property
    def prob_weights(self) -> np.ndarray:
        return self.weights / self.measure

    @property
    def n_points(self) -> int:
        return self.points.size


def cc_count(beta: int) -> int:
    """Clenshaw-Curtis point count: 1, 3, 5, 9, 17, ..."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    return 1 if beta == 1 else 2 ** (beta - 1) + 1


def gh_count(beta: int) -> int:
    """Gauss-Hermite point count 2*beta - 1 keeps the center point."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    return 2 * beta - 1


@lru_cache(maxsize=None)
def cc_rule(beta: int) -> QuadratureRule1D:
    """Nested Clenshaw-Curtis rule on [-1, 1].

    Points are extrema of the cosine lattice; the symmetrization keeps
    them exactly antisymmetric with an exact zero midpoint, which makes
    nestedness across levels bit-identical.  Weights integrate every
    polynomial of degree < m(beta) exactly.
    """
    m = cc_count(beta)
    if m == 1:
        pts = np.array([0.0])
        wts = np.array([2.0])
    else:
        n = m - 1
        j = np.arange(m)
        raw = np.cos(j * np.pi / n)
        pts = 0.5 * (raw - raw[::-1])
        wts = np.ones(m)
        t = j * np.pi / n
        for k in range(1, n // 2 + 1):
            b = 1.0 if 2 * k == n else 2.0
            wts -= b / (4.0 * k * k - 1.0) * np.cos(2.0 * k * t)
        wts *= 2.0 / n
        wts[0] *= 0.5
        wts[-1] *= 0.5
        pts = pts[::-1]  # ascending
        wts = wts[::-1]
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule1D("clenshaw_curtis", beta, pts, wts, measure=2.0)


@lru_cache(maxsize=None)
def gh_rule(beta: int) -> QuadratureRule1D:
    """Probabilists' Gauss-Hermite rule with 2*beta - 1 points.

    Weights are normalized to the standard normal measure; degree of
    exactness 2m - 1.
    """
    m = gh_count(beta)
    pts, wts = np.polynomial.hermite_e.hermegauss(m)
    wts = wts / np.sum(wts)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule1D("gauss_hermite", beta, pts, wts, measure=1.0)


@lru_cache(maxsize=None)
def gl_rule(beta: int) -> QuadratureRule1D:
    """Gauss-Legendre rule on [-1, 1] with beta points (not nested)."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    pts, wts = np.polynomial.legendre.leggauss(beta)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule1D("gauss_legendre", beta, pts, wts, measure=2.0)


def transform_gaussian_points(points, mu, Sigma) -> np.ndarray:
    """Map standard-normal nodes (rows) to N(mu, Sigma) via the Cholesky factor."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mu = np.asarray(mu, dtype=float)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    try:
        L = cholesky(Sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"covariance not SPD: {exc}") from exc
    return points @ L.T + mu


def tensor_grid(rules) -> tuple[np.ndarray, np.ndarray]:
    """Full product grid: node matrix (n, d) and probability weights (n,)."""
    rules = list(rules)
    if not rules:
        raise ValueError("need at least one rule")
    pts_1d = [r.points for r in rules]
    wts_1d = [r.prob_weights for r in rules]
    nodes = np.array(list(product(*pts_1d)))
    wts = np.ones(len(nodes))
    for k, combo in enumerate(product(*wts_1d)):
        wts[k] = np.prod(combo)
    return nodes, wts


def tensor_quadrature(rules, f) -> float:
    """Probability-weighted tensor quadrature of a scalar function."""
    nodes, wts = tensor_grid(rules)
    return float(sum(w * f(z) for z, w in zip(nodes, wts)))


class IndexSet:
    """Downward-closed set of multi-indices with per-dimension floors."""

    def __init__(self, members, floors=None):
        members = [tuple(int(e) for e in m) for m in members]
        if not members:
            raise IndexSetError("index set must not be empty")
        dim = len(members[0])
        if any(len(m) != dim for m in members):
            raise IndexSetError("all indices must share one dimension")
        self.dim = dim
        self.floors = tuple(int(f) for f in (floors if floors is not None else (1,) * dim))
        self.members = frozenset(members)
        for m in members:
            if any(e < f for e, f in zip(m, self.floors)):
                raise IndexSetError(f"index {m} below the floors {self.floors}")

    def __contains__(self, idx):
        return tuple(idx) in self.members

    def __iter__(self):
        return iter(sorted(self.members))

    def __len__(self):
        return len(self.members)

    def is_downward_closed(self) -> bool:
        for m in self.members:
            for i in range(self.dim):
                if m[i] > self.floors[i]:
                    below = m[:i] + (m[i] - 1,) + m[i + 1 :]
                    if below not in self.members:
                        return False
        return True

    def validate(self) -> None:
        if not self.is_downward_closed():
            raise IndexSetError("index set is not downward closed")


def backward_neighbors(index, floors):
    out = []
    for i, (e, f) in enumerate(zip(index, floors)):
        if e > f:
            out.append(index[:i] + (e - 1,) + index[i + 1 :])
    return out


def forward_neighbors(index):
    return [index[:i] + (index[i] + 1,) + index[i + 1 :] for i in range(len(index))]


def mixed_difference(index, U, memo: dict | None = None, floors=None) -> float:
    """Signed sum of U over the hypercube of backward shifts of ``index``.

    Shifts that would push an entry below its floor are omitted, matching
    the base case of the per-dimension first-difference operator.
    """
    index = tuple(index)
    floors = tuple(floors) if floors is not None else (1,) * len(index)
    memo = {} if memo is None else memo

    def u_of(idx):
        if idx not in memo:
            memo[idx] = U(idx)
        return memo[idx]

    total = 0.0
    for shift in product((0, 1), repeat=len(index)):
        cand = tuple(e - s for e, s in zip(index, shift))
        if any(c < f for c, f in zip(cand, floors)):
            continue
        total += (-1.0) ** sum(shift) * u_of(cand)
    return total


def combination_coefficients(index_set: IndexSet) -> dict:
    """Combination-technique coefficient of each member.

    coeff(idx) = sum over binary forward shifts staying inside the set of
    (-1)**|shift|; interior indices get zero and are skipped downstream.
    """
    index_set.validate()
    coeffs = {}
    for idx in index_set.members:
        c = 0
        for shift in product((0, 1), repeat=index_set.dim):
            cand = tuple(e + s for e, s in zip(idx, shift))
            if cand in index_set.members:
                c += (-1) ** sum(shift)
        if c != 0:
            coeffs[idx] = c
    return coeffs


def combination_estimate(index_set: IndexSet, U, memo: dict | None = None) -> float:
    """Telescoped estimate over a downward-closed set via coefficients.

    Each tensor value is evaluated at most once; validation happens before
    any evaluation.
    """
    coeffs = combination_coefficients(index_set)
    memo = {} if memo is None else memo
    total = 0.0
    for idx in sorted(coeffs):
        if idx not in memo:
            memo[idx] = U(idx)
        total += coeffs[idx] * memo[idx]
    return total


@dataclass
class AdaptResult:
    index_set: IndexSet
    converged: bool
    work_spent: float
    margin: dict  # candidate index -> (gain, work)
    history: list
    capped: bool = False  # a level cap blocked at least one candidate
    profits: dict | None = None  # every evaluated index -> (gain, work)


def adapt_index_set(
    profit,
    tol: float,
    max_work: float,
    dim: int | None = None,
    floors=None,
    level_caps=None,
) -> AdaptResult:
    """Greedy dimension-adaptive construction of a downward-closed set.

    ``profit(index) -> (gain, work)`` reports the estimated contribution
    and cost of one index.  Starting from the floor index, the candidate
    with the best |gain|/work ratio is admitted until the summed |gain|
    over the margin drops to tol/2 or the work budget runs out (the
    result is then flagged not converged).  Ties break lexicographically,
    so runs are reproducible.  ``level_caps`` bounds each dimension's
    entries; capped candidates are simply never proposed.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if floors is None:
        if dim is None:
            raise ValueError("give either floors or dim")
        floors = (1,) * dim
    floors = tuple(floors)
    base = floors
    accepted = {base}
    evaluated: dict[tuple, tuple] = {}
    history = [base]
    work_spent = 0.0
    capped_out = False

    def admissible(idx):
        return all(b in accepted for b in backward_neighbors(idx, floors))

    def consider(idx):
        nonlocal work_spent, capped_out
        if idx in evaluated or idx in accepted:
            return
        if level_caps is not None and any(e > c for e, c in zip(idx, level_caps)):
            capped_out = True
            return
        gain, work = profit(idx)
        evaluated[idx] = (float(gain), float(work))
        work_spent += float(work)

    g0, w0 = profit(base)
    evaluated[base] = (float(g0), float(w0))
    work_spent += float(w0)
    for nb in forward_neighbors(base):
        if admissible(nb):
            consider(nb)

    converged = False
    while True:
        margin = {i: gw for i, gw in evaluated.items() if i not in accepted}
        margin_sum = sum(abs(g) for g, _ in margin.values())
        if margin_sum <= 0.5 * tol:
            converged = True
            break
        if work_spent >= max_work or not margin:
            break
        best = min(margin, key=lambda i: (-abs(margin[i][0]) / max(margin[i][1], 1e-300), i))
        assert admissible(best)  # every admission keeps the set downward closed
        accepted.add(best)
        history.append(best)
        for nb in forward_neighbors(best):
            if admissible(nb):
                consider(nb)
                if work_spent >= max_work:
                    break
    final_margin = {i: gw for i, gw in evaluated.items() if i not in accepted}
    result = AdaptResult(
        index_set=IndexSet(accepted, floors=floors),
        converged=converged,
        work_spent=work_spent,
        margin=final_margin,
        history=history,
        capped=capped_out,
        profits=dict(evaluated),
    )
    result.index_set.validate()
    return result
