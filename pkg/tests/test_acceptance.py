"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``)."""

import itertools
import math
import time
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from conftest import dense_wls_solution, fd_jacobian, random_linear_graph

from gnssfgo.ambiguity import AmbiguityProblem, FixDecision, search_integers
from gnssfgo.graph import (
    Values,
    build_ordering,
    clock_key,
    linearize,
    position_key,
)
from gnssfgo.pipeline import (
    Example1Config,
    Example2Config,
    run_example1,
    run_example2,
    sdc_score,
)
from gnssfgo.scenario import (
    ClockConfig,
    NoiseConfig,
    OutlierConfig,
    apply_masks,
    generate,
    rtk_scenario,
    urban_scenario,
)
from gnssfgo.solver import SolverConfig, marginal_covariance, solve


def _report(name: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f" [{detail}]"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# Criterion: linear-solver oracle
# ---------------------------------------------------------------------------

def test_linear_solver_oracle():
    rng = np.random.default_rng(2024)
    t_solve = 0.0
    worst = 0.0
    for _ in range(50):
        n_epochs = int(rng.integers(2, 40))  # up to 200 columns (5 per epoch)
        graph, init = random_linear_graph(rng, n_epochs=n_epochs, cross_factors=2 * n_epochs)
        t0 = time.perf_counter()
        report = solve(graph, init)
        t_solve += time.perf_counter() - t0
        ordering, oracle = dense_wls_solution(graph, init)
        x = report.values.to_vector(ordering)
        worst = max(worst, float(np.max(np.abs(x - oracle))))
        assert report.converged
    _report(
        "linear-solver oracle (50 graphs vs closed-form WLS, 1e-9)",
        worst < 1e-9 and t_solve < 1.0,
        f"max dev {worst:.2e}, solve time {t_solve:.3f}s",
    )


# ---------------------------------------------------------------------------
# Criterion: jacobian suite
# ---------------------------------------------------------------------------

def test_jacobian_suite():
    from gnssfgo import factors as fm
    from test_factors import LAYOUT, rand_anchor, random_obs

    rng = np.random.default_rng(7)
    worst = 0.0
    count = 0
    for _ in range(100):
        obs = random_obs(rng, "G01")
        ref = random_obs(rng, "G02")
        prev = random_obs(rng, "G01")
        a1, a2 = rand_anchor(rng), rand_anchor(rng)
        v0 = rng.normal(size=3)
        cases = [
            fm.pseudorange_factor(obs, 1, LAYOUT, 1.3),
            fm.pseudorange_sd_factor(obs, ref, 1, 0.9),
            fm.doppler_velocity_factor(obs, 1, v0, 0.5),
            fm.doppler_velocity_sd_factor(obs, ref, 1, v0, 0.5),
            fm.doppler_tdpos_factor(prev, obs, (0, 1), 0.8, a1, a2, 0.7, layout=LAYOUT),
            fm.doppler_tdpos_factor(prev, obs, (0, 1), 0.8, a1, a2, 0.7),
            fm.tdcp_factor(obs, (0, 1), a1, a2, LAYOUT, 0.1),
            fm.tdcp_sd_factor(obs, ref, (0, 1), a1, a2, 0.1),
            fm.dd_carrier_factor(obs, ref, 1, 1, 3, 0.005),
            fm.motion_factor((0, 1), 0.8, a1, a2, 0.2),
            fm.clock_factor((0, 1), 0.8, 3, 0.3),
            fm.clock_const_factor((0, 1), 3, 0.3),
        ]
        for factor in cases:
            v = Values()
            for key in factor.keys:
                v.set(key, rng.normal(scale=3.0, size=key.dim))
            for key, jac in zip(factor.keys, factor.jacobians):
                dev = float(np.max(np.abs(fd_jacobian(factor, v, key, step=1e-5) - jac)))
                worst = max(worst, dev)
                count += 1
    _report(
        "jacobian suite (all factor types vs central differences, 1e-6)",
        worst < 1e-6,
        f"{count} blocks checked, max dev {worst:.2e}",
    )


# ---------------------------------------------------------------------------
# Criterion: Example 1 direction (robust kernel improves p95)
# ---------------------------------------------------------------------------

def test_example1_direction():
    solver_cfg = SolverConfig(max_iterations=300, cost_tolerance=1e-6)
    t0 = time.perf_counter()
    improved = 0
    reductions = []
    for seed in range(1, 21):
        records, truth = generate(urban_scenario(seed))
        res_none = run_example1(
            records, truth.layout, Example1Config(robust="none"), truth=truth,
            solver_config=solver_cfg,
        )
        res_huber = run_example1(
            records, truth.layout, Example1Config(robust="huber", huber_k=1.345), truth=truth,
            solver_config=solver_cfg,
        )
        reduction = 1.0 - res_huber.stats.p95 / res_none.stats.p95
        reductions.append(reduction)
        if reduction >= 0.40:
            improved += 1
    elapsed = time.perf_counter() - t0
    _report(
        "example 1 direction (huber cuts 3D p95 by >=40% on >=18/20 seeds, <30s)",
        improved >= 18 and elapsed < 30.0,
        f"{improved}/20 seeds, min reduction {min(reductions)*100:.1f}%, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Criterion: masking contract
# ---------------------------------------------------------------------------

def test_masking_contract():
    records, _ = generate(urban_scenario(seed=0, n_epochs=1))
    rec = records[0]
    rng = np.random.default_rng(123)
    labeled = set()
    for i, obs in enumerate(rec.sats):
        mode = i % 3
        if mode == 0:
            obs.snr = float(rng.uniform(10.0, 34.99))
            obs.elevation = float(rng.uniform(math.radians(15.0), 1.5))
            labeled.add(obs.sat_id)
        elif mode == 1:
            obs.snr = float(rng.uniform(35.0, 50.0))
            obs.elevation = float(rng.uniform(0.01, math.radians(14.99)))
            labeled.add(obs.sat_id)
        else:
            obs.snr = float(rng.uniform(35.0, 50.0))
            obs.elevation = float(rng.uniform(math.radians(15.0), 1.5))
    kept = apply_masks(rec, 35.0, math.radians(15.0))
    removed = {s.sat_id for s in rec.sats} - {s.sat_id for s in kept.sats}
    _report(
        "masking contract (35 dB-Hz / 15 deg removes exactly the labeled set)",
        removed == labeled,
        f"removed {sorted(removed)}",
    )


# ---------------------------------------------------------------------------
# Criterion: integer-search oracle
# ---------------------------------------------------------------------------

def test_integer_search_oracle():
    rng = np.random.default_rng(31337)
    t0 = time.perf_counter()
    exact = 0
    for _ in range(100):
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 0.02 * np.eye(3)
        float_amb = rng.normal(scale=2, size=3)
        cand = search_integers(AmbiguityProblem(float_amb, cov))
        qi = np.linalg.inv(cov)
        base = np.round(float_amb).astype(int)
        scored = []
        for off in itertools.product(range(-3, 4), repeat=3):
            z = base + np.asarray(off)
            d = z - float_amb
            scored.append((float(d @ qi @ d), tuple(int(v) for v in z)))
        scored.sort(key=lambda t: (round(t[0], 9), t[1]))
        if tuple(cand.best) == scored[0][1] and tuple(cand.second) == scored[1][1]:
            exact += 1
    elapsed = time.perf_counter() - t0
    _report(
        "integer-search oracle (100 problems vs +-3 box enumeration, <5s)",
        exact == 100 and elapsed < 5.0,
        f"{exact}/100 exact, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------------------
# Criterion: Example 2 direction
# ---------------------------------------------------------------------------

def test_example2_direction():
    at_least = 0
    trace_ok = 0
    strict = 0
    for seed in range(1, 21):
        records, truth = generate(rtk_scenario(seed))
        r1 = run_example2(records, truth.layout, Example2Config(model=1, ratio_threshold=2.0), truth=truth)
        r2 = run_example2(records, truth.layout, Example2Config(model=2, ratio_threshold=2.0), truth=truth)
        if r2.fixed_rate >= r1.fixed_rate:
            at_least += 1
        if r2.fixed_rate > r1.fixed_rate:
            strict += 1
        if r2.cov_trace <= r1.cov_trace:
            trace_ok += 1
    _report(
        "example 2 direction (model 2 fixed-rate >= model 1 on >=17/20; trace <= on all)",
        at_least >= 17 and trace_ok == 20,
        f"rate >= on {at_least}/20 (strictly better on {strict}), trace <= on {trace_ok}/20",
    )


# ---------------------------------------------------------------------------
# Criterion: fixed-solution accuracy
# ---------------------------------------------------------------------------

def test_fixed_solution_accuracy():
    horiz_errors = []
    correct = 0
    for seed in range(1, 51):
        cfg = rtk_scenario(seed, n_epochs=20)
        cfg.outliers.cycle_slip_prob = 0.0
        cfg.outliers.mass_slip_prob = 0.0
        records, truth = generate(cfg)
        res = run_example2(records, truth.layout, Example2Config(model=2), truth=truth)
        truth_b = np.zeros(res.slots.n_slots)
        for arc in res.slots.arcs:
            match = [
                t for t in truth.arcs if t.sat_id == arc.sat_id and t.start_epoch == arc.start_epoch
            ]
            truth_b[arc.slot] = match[0].ambiguity
        if res.batch_decision is FixDecision.FIXED and np.array_equal(
            res.batch_candidates.best, truth_b.astype(int)
        ):
            correct += 1
            horiz_errors.extend(
                np.linalg.norm((res.positions - truth.positions)[:, :2], axis=1)
            )
    p95 = float(np.percentile(np.asarray(horiz_errors), 95.0))
    _report(
        "fixed-solution accuracy (correct fix; horizontal p95 < 2 cm over 50 seeds)",
        correct == 50 and p95 < 0.02,
        f"{correct}/50 correct fixes, p95 {p95*100:.2f} cm",
    )


# ---------------------------------------------------------------------------
# Criterion: noiseless end-to-end
# ---------------------------------------------------------------------------

def _silence(cfg, zero_clock):
    cfg.noise = NoiseConfig(psr_a=0.0, psr_b=0.0, dopp=0.0, phase=0.0)
    cfg.outliers = OutlierConfig()
    if zero_clock:
        cfg.clock = ClockConfig()
    else:
        cfg.clock.random_walk = 0.0
    cfg.anchor_error = 0.0
    cfg.anchor_velocity_error = 0.0
    return cfg


def test_noiseless_end_to_end():
    details = []
    ok = True

    records, truth = generate(_silence(urban_scenario(seed=1, n_epochs=15), zero_clock=True))
    res1 = run_example1(records, truth.layout, Example1Config(robust="none"), truth=truth)
    err1 = float(np.max(np.linalg.norm(res1.positions - truth.positions, axis=1)))
    ok &= err1 < 1e-6
    details.append(f"ex1 {err1:.2e} m")

    for model in (1, 2):
        records, truth = generate(_silence(rtk_scenario(seed=2, n_epochs=10), zero_clock=False))
        res2 = run_example2(records, truth.layout, Example2Config(model=model), truth=truth)
        err2 = float(np.max(np.linalg.norm(res2.positions - truth.positions, axis=1)))
        ok &= res2.batch_decision is FixDecision.FIXED and err2 < 1e-6
        details.append(f"ex2/m{model} {err2:.2e} m")

    # motion and clock residuals at truth
    from gnssfgo.factors import clock_factor, motion_factor
    from gnssfgo.graph import drift_key, evaluate_error, velocity_key

    cfg = _silence(rtk_scenario(seed=3, n_epochs=8), zero_clock=False)
    cfg.clock.drift = 0.25
    records, truth = generate(cfg)
    v = Values()
    dim = truth.layout.clock_dim
    for i, rec in enumerate(records):
        v.set(position_key(rec.epoch), truth.positions[i] - rec.anchor_position)
        v.set(velocity_key(rec.epoch), truth.velocities[i] - rec.anchor_velocity)
        v.set(clock_key(rec.epoch, dim), truth.clocks[i])
        v.set(drift_key(rec.epoch), [truth.drifts[i]])
    worst = 0.0
    for prev, cur in zip(records[:-1], records[1:]):
        fm_ = motion_factor((prev.epoch, cur.epoch), cur.dt_prev, prev.anchor, cur.anchor, 1.0)
        fc_ = clock_factor((prev.epoch, cur.epoch), cur.dt_prev, dim, 1.0)
        worst = max(
            worst,
            float(np.max(np.abs(evaluate_error(fm_, v)))),
            float(np.max(np.abs(evaluate_error(fc_, v)))),
        )
    ok &= worst < 1e-9
    details.append(f"motion/clock residuals {worst:.2e}")

    _report("noiseless end-to-end (truth < 1e-6 m; residuals < 1e-9)", ok, ", ".join(details))


# ---------------------------------------------------------------------------
# Criterion: stats metric arithmetic
# ---------------------------------------------------------------------------

def test_stats_metric_reference():
    score = sdc_score(2.644, 6.867)
    displayed = Decimal(repr(score)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP)
    _report(
        "stats metric (p50=2.644, p95=6.867 -> SDC score 4.756)",
        displayed == Decimal("4.756"),
        f"score {score!r} -> {displayed}",
    )


# ---------------------------------------------------------------------------
# Criterion: marginal covariance oracle
# ---------------------------------------------------------------------------

def test_marginal_covariance_oracle():
    rng = np.random.default_rng(555)
    worst = 0.0
    for _ in range(20):
        n_epochs = int(rng.integers(2, 8))
        graph, init = random_linear_graph(rng, n_epochs=n_epochs, cross_factors=2 * n_epochs)
        report = solve(graph, init)
        ordering = build_ordering(graph)
        system = linearize(graph, report.values)
        amat, _ = system.jacobian_and_rhs()
        full = np.linalg.inv(amat.T @ amat)
        pick = [position_key(int(rng.integers(0, n_epochs))), clock_key(int(rng.integers(0, n_epochs)), 2)]
        got = marginal_covariance(graph, report.values, pick)
        idx = ordering.indices_of(pick)
        worst = max(worst, float(np.max(np.abs(got - full[np.ix_(idx, idx)]))))
    _report(
        "marginal covariance oracle (20 graphs vs dense inverse, 1e-8)",
        worst < 1e-8,
        f"max dev {worst:.2e}",
    )
