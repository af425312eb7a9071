"""Integer least-squares resolution of float carrier-phase ambiguities.

Pipeline: decorrelate the float covariance with unimodular integer
transforms (LDL-based integer Gauss steps plus symmetric permutations),
run a shrinking-ellipsoid search for the two closest integer vectors,
validate with the ratio test, and re-solve the graph with the winning
integers pinned by a hard prior.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .factors import ambiguity_prior_factor
from .graph import FactorGraph, Values, VariableKind, ambiguity_key
from .solver import SolutionReport, SolverConfig, solve

MAX_SEARCH_DIM = 64
_SEARCH_EXTRA = 4  # extra candidates kept to break exact cost ties


class AmbiguityError(ValueError):
    pass


@dataclass
class AmbiguityProblem:
    """Float ambiguity estimate (cycles) with its covariance (cycles^2)."""

    float_amb: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.float_amb = np.atleast_1d(np.asarray(self.float_amb, dtype=float))
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.float_amb.shape[0]
        if self.cov.shape != (n, n):
            raise AmbiguityError(f"covariance must be {n}x{n}, got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise AmbiguityError("covariance must be symmetric")

    @property
    def n(self) -> int:
        return self.float_amb.shape[0]


@dataclass
class IntegerCandidates:
    best: np.ndarray
    second: np.ndarray
    q_best: float
    q_second: float

    def __post_init__(self):
        self.best = np.asarray(self.best, dtype=np.int64)
        self.second = np.asarray(self.second, dtype=np.int64)
        if self.q_best > self.q_second:
            raise AmbiguityError("q_best must be <= q_second")
        if np.array_equal(self.best, self.second):
            raise AmbiguityError("best and second candidates must differ")


class FixDecision(enum.Enum):
    FIXED = "fixed"
    FLOAT = "float"


def _ldl_lower(qmat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor Q = L' diag(d) L with L unit lower triangular.

    Processes rows bottom-up; fails on non-positive pivots (non-SPD Q).
    """
    a = qmat.copy()
    n = a.shape[0]
    lmat = np.zeros((n, n))
    d = np.zeros(n)
    for i in range(n - 1, -1, -1):
        d[i] = a[i, i]
        if d[i] <= 0.0:
            raise AmbiguityError("covariance is not positive definite")
        lmat[i, : i + 1] = a[i, : i + 1] / np.sqrt(d[i])
        for j in range(i):
            a[j, : j + 1] -= lmat[i, : j + 1] * lmat[i, j]
        lmat[i, : i + 1] /= lmat[i, i]
    return lmat, d


def _gauss_step(lmat, zmat, zinv, i, j):
    """Integer-reduce L[i, j]; updates Z (columns) and Z^-1 (rows)."""
    mu = int(round(lmat[i, j]))
    if mu != 0:
        lmat[i:, j] -= mu * lmat[i:, i]
        zmat[:, j] -= mu * zmat[:, i]
        zinv[i, :] += mu * zinv[j, :]


def _perm_step(lmat, d, zmat, zinv, j, delta):
    """Swap adjacent states j, j+1 keeping the L' diag(d) L form."""
    eta = d[j] / delta
    lam = d[j + 1] * lmat[j + 1, j] / delta
    d[j] = eta * d[j + 1]
    d[j + 1] = delta
    a0 = lmat[j, :j].copy()
    a1 = lmat[j + 1, :j].copy()
    lmat[j, :j] = -lmat[j + 1, j] * a0 + a1
    lmat[j + 1, :j] = eta * a0 + lam * a1
    lmat[j + 1, j] = lam
    tmp = lmat[j + 2 :, j].copy()
    lmat[j + 2 :, j] = lmat[j + 2 :, j + 1]
    lmat[j + 2 :, j + 1] = tmp
    zmat[:, [j, j + 1]] = zmat[:, [j + 1, j]]
    zinv[[j, j + 1], :] = zinv[[j + 1, j], :]


def _reduce(qmat: np.ndarray):
    """LAMBDA-style reduction. Returns (L, d, Z, Zinv) with
    Z' Q Z = L' diag(d) L decorrelated, Z unimodular integer."""
    n = qmat.shape[0]
    lmat, d = _ldl_lower(qmat)
    zmat = np.eye(n, dtype=np.int64)
    zinv = np.eye(n, dtype=np.int64)
    j = n - 2
    k = n - 2
    while j >= 0:
        if j <= k:
            for i in range(j + 1, n):
                _gauss_step(lmat, zmat, zinv, i, j)
        delta = d[j] + lmat[j + 1, j] ** 2 * d[j + 1]
        if delta + 1e-6 < d[j + 1]:
            _perm_step(lmat, d, zmat, zinv, j, delta)
            k = j
            j = n - 2
        else:
            j -= 1
    return lmat, d, zmat, zinv


def decorrelate(problem: AmbiguityProblem) -> tuple[np.ndarray, AmbiguityProblem]:
    """Unimodular integer transform Z reducing off-diagonal correlation.

    Returns (Z, transformed problem) with cov' = Z' cov Z and
    float' = Z' float.
    """
    _, _, zmat, _ = _reduce(problem.cov)
    zf = zmat.astype(float)
    cov_t = zf.T @ problem.cov @ zf
    cov_t = 0.5 * (cov_t + cov_t.T)
    return zmat, AmbiguityProblem(zf.T @ problem.float_amb, cov_t)


def search_integers(problem: AmbiguityProblem, count: int = 2) -> IntegerCandidates:
    """Two integer vectors minimizing the Mahalanobis distance to the
    float solution (global minima via decorrelated ellipsoid search).

    Equal-cost candidates are ordered lexicographically for
    reproducibility.
    """
    if count != 2:
        raise AmbiguityError("only the best pair is supported")
    n = problem.n
    if n > MAX_SEARCH_DIM:
        raise AmbiguityError(f"dimension {n} exceeds search limit {MAX_SEARCH_DIM}")
    lmat, d, zmat, zinv = _reduce(problem.cov)
    zhat = zmat.T.astype(float) @ problem.float_amb
    cap = min(count + _SEARCH_EXTRA, max(count, 2 ** min(n, 8)))
    cand_z, qdist, ncand = kernels.ils_search(
        np.ascontiguousarray(zhat), np.ascontiguousarray(lmat), np.ascontiguousarray(d), cap
    )
    if ncand < 2:
        raise AmbiguityError("search returned fewer than two candidates")
    # Back-transform with the exact integer inverse and order by
    # (cost, lexicographic) with a tolerance for float ties.
    cands = []
    for i in range(ncand):
        avec = zinv.T @ cand_z[i]
        cands.append((float(qdist[i]), tuple(int(v) for v in avec)))
    qscale = max(abs(cands[0][0]), 1.0)
    cands.sort(key=lambda t: (round(t[0] / qscale, 9), t[1]))
    best_q, best_v = cands[0]
    second_q, second_v = cands[1]
    return IntegerCandidates(
        best=np.asarray(best_v), second=np.asarray(second_v), q_best=best_q, q_second=second_q
    )


def ratio_test(candidates: IntegerCandidates, threshold: float) -> FixDecision:
    """Accept the integer solution when the runner-up is sufficiently
    worse: fixed iff q_second / q_best >= threshold."""
    if candidates.q_best == 0.0:
        return FixDecision.FLOAT if candidates.q_second == 0.0 else FixDecision.FIXED
    ratio = candidates.q_second / candidates.q_best
    return FixDecision.FIXED if ratio >= threshold else FixDecision.FLOAT


def fix_solution(
    graph: FactorGraph,
    values: Values,
    fixed: np.ndarray,
    prior_sigma: float = 1e-6,
    config: SolverConfig | None = None,
) -> SolutionReport:
    """Re-solve with ambiguities pinned to the fixed integers.

    Initializes at the float solution with the ambiguity block replaced
    by the integers so the remaining correction stays small.
    """
    fixed = np.atleast_1d(np.asarray(fixed, dtype=float))
    amb_keys = [k for k in graph.keys() if k.kind == VariableKind.AMBIGUITY]
    if len(amb_keys) != 1:
        raise AmbiguityError(f"expected exactly one ambiguity variable, found {len(amb_keys)}")
    key = amb_keys[0]
    if key.dim != fixed.shape[0]:
        raise AmbiguityError(
            f"fixed vector length {fixed.shape[0]} does not match {key}"
        )
    fixed_graph = FactorGraph()
    fixed_graph.factors = list(graph.factors)
    fixed_graph.anchors = dict(graph.anchors)
    fixed_graph.add(ambiguity_prior_factor(fixed, sigma=prior_sigma))
    init = values.copy()
    init.set(ambiguity_key(key.dim, key.epoch), fixed)
    return solve(fixed_graph, init, config)
