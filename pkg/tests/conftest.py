import numpy as np
import pytest

from gnssfgo.graph import (
    Factor,
    FactorGraph,
    Values,
    clock_key,
    evaluate_error,
    position_key,
)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation once so timed tests measure warm kernels."""
    from gnssfgo import kernels
    from gnssfgo.solver import solve

    g = FactorGraph()
    k = position_key(0)
    g.add(Factor(keys=(k,), jacobians=(np.eye(3),), constant=[1.0, 2.0, 3.0], sigma=[1, 1, 1]))
    v = Values()
    v.set(k, np.zeros(3))
    solve(g, v)
    kernels.ils_search(np.array([0.2, -0.3]), np.eye(2), np.ones(2), 4)


def random_linear_graph(rng, n_epochs=3, cross_factors=4, kernel=None):
    """Well-conditioned random linear graph over position/clock blocks.

    Every key gets one full-rank block factor; extra factors couple
    random key pairs.
    """
    graph = FactorGraph()
    keys = []
    for e in range(n_epochs):
        keys.append(position_key(e))
        keys.append(clock_key(e, 2))
    for key in keys:
        jac = rng.normal(size=(key.dim, key.dim)) + 2.0 * np.eye(key.dim)
        graph.add(
            Factor(
                keys=(key,),
                jacobians=(jac,),
                constant=rng.normal(size=key.dim),
                sigma=rng.uniform(0.5, 2.0, size=key.dim),
                kernel=kernel,
            )
        )
    for _ in range(cross_factors):
        ka, kb = rng.choice(len(keys), size=2, replace=False)
        ka, kb = keys[ka], keys[kb]
        rows = int(rng.integers(1, 3))
        graph.add(
            Factor(
                keys=(ka, kb),
                jacobians=(rng.normal(size=(rows, ka.dim)), rng.normal(size=(rows, kb.dim))),
                constant=rng.normal(size=rows),
                sigma=rng.uniform(0.5, 2.0, size=rows),
                kernel=kernel,
            )
        )
    init = Values()
    for key in keys:
        init.set(key, np.zeros(key.dim))
    return graph, init


def random_values_like(rng, values, scale=1.0):
    out = Values()
    for key, vec in values.items():
        out.set(key, rng.normal(scale=scale, size=vec.shape[0]))
    return out


def fd_jacobian(factor, values, key, step=1e-5):
    """Central finite differences of evaluate_error w.r.t. one key."""
    base = values.copy()
    cols = []
    for i in range(key.dim):
        vp = base.copy()
        vm = base.copy()
        xp = vp.get(key).copy()
        xm = vm.get(key).copy()
        xp[i] += step
        xm[i] -= step
        vp.set(key, xp)
        vm.set(key, xm)
        cols.append((evaluate_error(factor, vp) - evaluate_error(factor, vm)) / (2 * step))
    return np.stack(cols, axis=1)


def dense_wls_solution(graph, init):
    """Closed-form weighted least-squares oracle built by stacking
    whitened blocks into a dense matrix (independent of linearize)."""
    from gnssfgo.graph import build_ordering

    ordering = build_ordering(graph)
    rows = sum(f.rows for f in graph.factors)
    amat = np.zeros((rows, ordering.n_cols))
    bvec = np.zeros(rows)
    r0 = 0
    for f in graph.factors:
        m = f.rows
        for key, jac in zip(f.keys, f.jacobians):
            start, stop = ordering.range_of(key)
            amat[r0 : r0 + m, start:stop] += jac / f.sigma[:, None]
        bvec[r0 : r0 + m] = f.constant / f.sigma
        r0 += m
    theta, *_ = np.linalg.lstsq(amat, bvec, rcond=None)
    return ordering, theta
