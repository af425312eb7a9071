"""Batch Levenberg-Marquardt with IRLS robust weighting.

All factors are linear, so an undamped step solves the reweighted
least-squares problem exactly; kernel-free graphs land on the
weighted-least-squares optimum in one step. Each iteration therefore
tries the pure Gauss-Newton step first and engages multiplicative
damping (starting at ``lambda_init``, scaled by ``lambda_factor``) only
while a trial step fails to decrease the cost; damping is released
after every accepted step. Kernel weights are recomputed from the
current values at every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .graph import (
    ColumnOrdering,
    FactorGraph,
    PackedGraph,
    Values,
    VariableKey,
    build_ordering,
    check_values_cover,
)
from .robust import RobustKernel, huber_weight  # noqa: F401  (re-exported API)

DENSE_COLUMN_LIMIT = 2000
_MAX_TRIALS_PER_ITERATION = 25
_TINY = 1e-300


class SingularityError(RuntimeError):
    """Normal equations are rank deficient."""

    def __init__(self, keys: Sequence[VariableKey], detail: str = ""):
        self.keys = list(keys)
        names = ", ".join(str(k) for k in self.keys) or "<none identified>"
        msg = f"singular normal equations; unconstrained keys: {names}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass
class SolverConfig:
    max_iterations: int = 100
    lambda_init: float = 1e-4
    lambda_factor: float = 10.0
    cost_tolerance: float = 1e-9
    step_tolerance: float = 1e-10

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.lambda_init <= 0 or self.cost_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances and lambda_init must be positive")
        if self.lambda_factor <= 1:
            raise ValueError("lambda_factor must be > 1")


@dataclass
class SolutionReport:
    values: Values
    iterations: int
    final_cost: float
    converged: bool
    per_iteration_costs: list[float] = field(default_factory=list)


def _diagnose_singularity(hmat: np.ndarray, ordering: ColumnOrdering) -> list[VariableKey]:
    """Keys whose diagonal block is singular, or that carry the null space."""
    bad: list[VariableKey] = []
    for key in ordering.keys:
        start, stop = ordering.range_of(key)
        block = hmat[start:stop, start:stop]
        if not np.all(np.isfinite(block)):
            bad.append(key)
            continue
        eigvals = np.linalg.eigvalsh(block)
        scale = max(np.max(np.abs(eigvals)), 1.0)
        if eigvals[0] <= 1e-12 * scale:
            bad.append(key)
    if bad:
        return bad
    # Diagonal blocks fine: rank deficiency couples several keys. Point
    # at the keys dominating the smallest eigenvector.
    eigvals, eigvecs = np.linalg.eigh(hmat)
    null = np.abs(eigvecs[:, 0])
    thresh = 0.1 * np.max(null)
    for key in ordering.keys:
        start, stop = ordering.range_of(key)
        if np.max(null[start:stop]) >= thresh:
            bad.append(key)
    return bad


def _solve_spd(hmat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = hmat.shape[0]
    if n <= DENSE_COLUMN_LIMIT:
        cf = scipy.linalg.cho_factor(hmat, check_finite=False)
        return scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    sparse = scipy.sparse.csc_matrix(hmat)
    lu = scipy.sparse.linalg.splu(sparse)
    return lu.solve(rhs)


def _damped_step(hmat: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    if lam > 0:
        hd = hmat + lam * np.diag(np.diag(hmat))
    else:
        hd = hmat
    return _solve_spd(hd, rhs)


def solve(
    graph: FactorGraph, init: Values, config: SolverConfig | None = None
) -> SolutionReport:
    """Minimize the robustified weighted least-squares objective.

    Accepted steps strictly decrease the cost; convergence is declared
    when the relative cost change drops below ``cost_tolerance`` or the
    max-norm of the step drops below ``step_tolerance``.
    """
    cfg = config or SolverConfig()
    check_values_cover(graph, init)
    ordering = build_ordering(graph)
    packed = PackedGraph(graph, ordering)
    x = init.to_vector(ordering)

    cost = packed.cost(x)
    costs = [cost]
    lam = 0.0
    converged = False
    iterations = 0

    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        hmat, rhs, cost, _ = packed.normal_equations(x)
        accepted = False
        step = None
        for _ in range(_MAX_TRIALS_PER_ITERATION):
            try:
                step = _damped_step(hmat, rhs, lam)
            except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, RuntimeError):
                bad = _diagnose_singularity(hmat, ordering)
                raise SingularityError(bad) from None
            if not np.all(np.isfinite(step)):
                raise SingularityError(_diagnose_singularity(hmat, ordering))
            if np.max(np.abs(step)) < cfg.step_tolerance:
                converged = True
                break
            cand = x + step
            cand_cost = packed.cost(cand)
            if cand_cost < cost:
                accepted = True
                break
            lam = cfg.lambda_init if lam == 0.0 else lam * cfg.lambda_factor
        if converged:
            break
        if not accepted:
            # No damping level produced a decrease: numeric floor reached.
            break
        rel_change = (cost - cand_cost) / max(cost, _TINY)
        x = cand
        cost = cand_cost
        costs.append(cost)
        lam = 0.0
        if rel_change < cfg.cost_tolerance or np.max(np.abs(step)) < cfg.step_tolerance:
            converged = True
        if cost == 0.0:
            converged = True

    return SolutionReport(
        values=Values.from_vector(ordering, x),
        iterations=iterations,
        final_cost=cost,
        converged=converged,
        per_iteration_costs=costs,
    )


def marginal_covariance(
    graph: FactorGraph, values: Values, keys: Sequence[VariableKey]
) -> np.ndarray:
    """Covariance sub-block of the requested keys at the given values.

    Inverts the information matrix H = A'A with kernel weights frozen at
    ``values``; returns the (sum of dims) x (sum of dims) block ordered
    as the keys are passed.
    """
    check_values_cover(graph, values)
    ordering = build_ordering(graph)
    packed = PackedGraph(graph, ordering)
    x = values.to_vector(ordering)
    hmat, _, _, _ = packed.normal_equations(x)
    idx = ordering.indices_of(keys)
    rhs = np.zeros((ordering.n_cols, idx.size))
    rhs[idx, np.arange(idx.size)] = 1.0
    try:
        if ordering.n_cols <= DENSE_COLUMN_LIMIT:
            cf = scipy.linalg.cho_factor(hmat, check_finite=False)
            cols = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
        else:
            lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(hmat))
            cols = lu.solve(rhs)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, RuntimeError):
        raise SingularityError(_diagnose_singularity(hmat, ordering)) from None
    cov = cols[idx, :]
    return 0.5 * (cov + cov.T)
