import numpy as np
import pytest
from conftest import dense_wls_solution, random_linear_graph

from gnssfgo.graph import Factor, FactorGraph, Values, clock_key, position_key
from gnssfgo.robust import RobustKernel, huber_cost, huber_weight
from gnssfgo.solver import (
    SingularityError,
    SolverConfig,
    marginal_covariance,
    solve,
)


def test_huber_weight_examples():
    assert huber_weight(0.5, 1.345) == 1.0
    assert huber_weight(2.69, 1.345) == pytest.approx(0.5)
    assert huber_weight(-13.45, 1.345) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        huber_weight(1.0, 0.0)


def test_huber_weight_times_r_continuous_at_threshold():
    k = 1.345
    below = huber_weight(k - 1e-12, k) * (k - 1e-12)
    above = huber_weight(k + 1e-12, k) * (k + 1e-12)
    assert below == pytest.approx(above, abs=1e-9)
    assert below == pytest.approx(k, abs=1e-9)


def _toy_1d(kernel=None, sigmas=(1.0, 1.0), targets=(0.0, 10.0)):
    k = clock_key(0, 1)
    g = FactorGraph()
    for sigma, target in zip(sigmas, targets):
        g.add(
            Factor(
                keys=(k,),
                jacobians=([[1.0]],),
                constant=[target],
                sigma=[sigma],
                kernel=kernel,
            )
        )
    init = Values()
    init.set(k, [0.0])
    return g, init, k


def test_solve_1d_mean():
    g, init, k = _toy_1d()
    report = solve(g, init)
    assert report.converged
    assert report.values.get(k)[0] == pytest.approx(5.0)


def test_solve_linear_graphs_match_wls_within_two_iterations():
    rng = np.random.default_rng(21)
    for _ in range(10):
        graph, init = random_linear_graph(rng, n_epochs=3, cross_factors=5)
        report = solve(graph, init)
        ordering, oracle = dense_wls_solution(graph, init)
        x = report.values.to_vector(ordering)
        np.testing.assert_allclose(x, oracle, atol=1e-9)
        assert report.converged
        assert report.iterations <= 2


def test_solve_huber_1d_reaches_global_minimum():
    # Flat-plateau objective: the minimizer set is an interval, so check
    # membership and optimal cost against a dense-scan oracle.
    kern = RobustKernel.huber(1.345)
    g, init, k = _toy_1d(kernel=kern)
    report = solve(g, init)
    assert report.converged
    x = report.values.get(k)[0]
    assert 0.0 < x < 5.0

    def cost(t):
        return huber_cost(t * t, 1.345) + huber_cost((t - 10.0) ** 2, 1.345)

    grid = np.linspace(-2.0, 12.0, 200001)
    best = min(cost(t) for t in grid)
    assert report.final_cost <= best + 1e-9
    argmin = grid[np.array([cost(t) for t in grid]) <= best + 1e-12]
    assert np.min(np.abs(argmin - x)) < 1e-4

    costs = report.per_iteration_costs
    assert all(a >= b for a, b in zip(costs, costs[1:]))


def test_solve_huber_unique_minimum_matches_golden_section():
    # Unequal sigmas break the plateau; the optimum is unique.
    kern = RobustKernel.huber(1.345)
    g, init, k = _toy_1d(kernel=kern, sigmas=(1.0, 2.0))
    report = solve(g, init)
    x = report.values.get(k)[0]

    def cost(t):
        return huber_cost(t * t, 1.345) + huber_cost(((t - 10.0) / 2.0) ** 2, 1.345)

    lo, hi = -2.0, 12.0
    phi = (np.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    for _ in range(200):
        if cost(c) < cost(d):
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    golden = 0.5 * (a + b)
    assert x == pytest.approx(golden, abs=1e-6)


def test_solve_insertion_order_invariance():
    rng = np.random.default_rng(33)
    graph, init = random_linear_graph(rng, n_epochs=2, cross_factors=6)
    report_a = solve(graph, init)
    shuffled = FactorGraph()
    order = rng.permutation(len(graph.factors))
    for idx in order:
        shuffled.add(graph.factors[idx])
    report_b = solve(shuffled, init)
    for key, vec in report_a.values.items():
        np.testing.assert_allclose(vec, report_b.values.get(key), atol=1e-9)


def test_solve_whitening_invariance():
    rng = np.random.default_rng(17)
    graph, init = random_linear_graph(rng, n_epochs=2, cross_factors=3)
    report_a = solve(graph, init)
    scaled = FactorGraph()
    for i, f in enumerate(graph.factors):
        if i == 0:
            scaled.add(
                Factor(
                    keys=f.keys,
                    jacobians=tuple(3.0 * j for j in f.jacobians),
                    constant=3.0 * f.constant,
                    sigma=3.0 * f.sigma,
                )
            )
        else:
            scaled.add(f)
    report_b = solve(scaled, init)
    for key, vec in report_a.values.items():
        np.testing.assert_allclose(vec, report_b.values.get(key), atol=1e-9)


def test_solve_reports_nonconvergence_without_error():
    kern = RobustKernel.huber(0.5)
    g, init, _ = _toy_1d(kernel=kern)
    report = solve(g, init, SolverConfig(max_iterations=1))
    assert not report.converged
    assert report.iterations == 1


def test_solve_zero_jacobian_key_raises_singularity():
    kx = position_key(0)
    kc = clock_key(0, 1)
    g = FactorGraph()
    g.add(
        Factor(
            keys=(kx, kc),
            jacobians=(np.eye(3), np.zeros((3, 1))),
            constant=np.zeros(3),
            sigma=np.ones(3),
        )
    )
    init = Values()
    init.set(kx, np.zeros(3))
    init.set(kc, np.zeros(1))
    with pytest.raises(SingularityError, match="clock@0"):
        solve(g, init)


def test_solve_rank_deficient_pair_raises():
    ka, kb = position_key(0), position_key(1)
    g = FactorGraph()
    g.add(
        Factor(
            keys=(ka, kb),
            jacobians=(np.eye(3), -np.eye(3)),
            constant=np.zeros(3),
            sigma=np.ones(3),
        )
    )
    init = Values()
    init.set(ka, np.zeros(3))
    init.set(kb, np.zeros(3))
    with pytest.raises(SingularityError):
        solve(g, init)


def test_marginal_covariance_identity_and_stacking():
    k = position_key(0)
    g = FactorGraph()
    g.add(Factor(keys=(k,), jacobians=(np.eye(3),), constant=np.zeros(3), sigma=np.ones(3)))
    v = Values()
    v.set(k, np.zeros(3))
    np.testing.assert_allclose(marginal_covariance(g, v, [k]), np.eye(3), atol=1e-12)
    g.add(Factor(keys=(k,), jacobians=(np.eye(3),), constant=np.zeros(3), sigma=np.ones(3)))
    np.testing.assert_allclose(marginal_covariance(g, v, [k]), 0.5 * np.eye(3), atol=1e-12)


def test_marginal_covariance_matches_dense_inverse():
    rng = np.random.default_rng(8)
    graph, init = random_linear_graph(rng, n_epochs=3, cross_factors=6)
    report = solve(graph, init)
    from gnssfgo.graph import build_ordering, linearize

    ordering = build_ordering(graph)
    system = linearize(graph, report.values)
    amat, _ = system.jacobian_and_rhs()
    full_cov = np.linalg.inv(amat.T @ amat)
    keys = [position_key(1), clock_key(2, 2)]
    got = marginal_covariance(graph, report.values, keys)
    idx = ordering.indices_of(keys)
    np.testing.assert_allclose(got, full_cov[np.ix_(idx, idx)], atol=1e-8)
    eigs = np.linalg.eigvalsh(got)
    assert np.all(eigs > 0)
