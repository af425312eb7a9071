import math

import numpy as np
import pytest

from gnssfgo.factors import SatSystem
from gnssfgo.graph import Values, clock_key, evaluate_error, position_key
from gnssfgo.pipeline import build_example1_graph
from gnssfgo.scenario import (
    ClockConfig,
    NoiseConfig,
    OutlierConfig,
    ScenarioConfig,
    ScenarioError,
    TrajectoryConfig,
    apply_masks,
    elevation_sigma,
    generate,
    rtk_scenario,
    scenario_from_dict,
    scenario_to_dict,
    spread_constellation,
    urban_scenario,
)


def test_elevation_sigma_values():
    assert elevation_sigma(math.radians(90), 0.3, 0.3) == pytest.approx(math.sqrt(0.18))
    assert elevation_sigma(math.radians(90), 0.3, 0.3) == pytest.approx(0.4243, abs=1e-4)
    assert elevation_sigma(math.radians(30), 0.3, 0.3) == pytest.approx(0.6708, abs=1e-4)
    s15 = elevation_sigma(math.radians(15), 0.3, 0.3)
    s30 = elevation_sigma(math.radians(30), 0.3, 0.3)
    s60 = elevation_sigma(math.radians(60), 0.3, 0.3)
    assert s15 > s30 > s60
    with pytest.raises(ValueError):
        elevation_sigma(0.0, 0.3, 0.3)


def test_apply_masks_thresholds():
    cfg = urban_scenario(seed=0, n_epochs=1)
    records, _ = generate(cfg)
    rec = records[0]
    rec.sats[0].snr = 34.9
    rec.sats[0].elevation = math.radians(45)
    rec.sats[1].snr = 40.0
    rec.sats[1].elevation = math.radians(14)
    rec.sats[2].snr = 40.0
    rec.sats[2].elevation = math.radians(45)
    kept = apply_masks(rec, 35.0, math.radians(15))
    kept_ids = {s.sat_id for s in kept.sats}
    assert rec.sats[0].sat_id not in kept_ids
    assert rec.sats[1].sat_id not in kept_ids
    assert rec.sats[2].sat_id in kept_ids


def test_apply_masks_exact_label_contract():
    cfg = urban_scenario(seed=1, n_epochs=1)
    records, _ = generate(cfg)
    rec = records[0]
    rng = np.random.default_rng(0)
    expect_removed = set()
    for obs in rec.sats:
        mode = rng.integers(0, 3)
        if mode == 0:
            obs.snr = float(rng.uniform(20, 34.999))
            expect_removed.add(obs.sat_id)
        elif mode == 1:
            obs.elevation = float(rng.uniform(0.01, math.radians(14.9)))
            expect_removed.add(obs.sat_id)
        else:
            obs.snr = float(rng.uniform(35.0, 50))
            obs.elevation = float(rng.uniform(math.radians(15.0), 1.5))
    kept = apply_masks(rec, 35.0, math.radians(15))
    assert {s.sat_id for s in rec.sats} - {s.sat_id for s in kept.sats} == expect_removed


def test_generate_deterministic_and_serializable():
    cfg = urban_scenario(seed=42, n_epochs=5)
    recs_a, truth_a = generate(cfg)
    recs_b, truth_b = generate(scenario_from_dict(scenario_to_dict(cfg)))
    assert len(recs_a) == len(recs_b)
    for ra, rb in zip(recs_a, recs_b):
        np.testing.assert_array_equal(ra.anchor_position, rb.anchor_position)
        for sa, sb in zip(ra.sats, rb.sats):
            assert sa.sat_id == sb.sat_id
            assert sa.psr_residual == sb.psr_residual
            assert sa.tdcp_residual == sb.tdcp_residual
            assert sa.dd_carrier_residual == sb.dd_carrier_residual
    np.testing.assert_array_equal(truth_a.positions, truth_b.positions)


def test_trajectory_trapezoid_invariant():
    for cfg in (
        urban_scenario(seed=3, n_epochs=8),
        rtk_scenario(seed=3, n_epochs=8),
        ScenarioConfig(
            n_epochs=12,
            dt=0.5,
            trajectory=TrajectoryConfig(
                kind="waypoint_polyline",
                waypoints=[(0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (10.0, 10.0, 0.0)],
                speed=4.0,
            ),
            constellation=spread_constellation(6),
        ),
    ):
        _, truth = generate(cfg)
        for i in range(1, cfg.n_epochs):
            lhs = truth.positions[i]
            rhs = truth.positions[i - 1] + cfg.dt * 0.5 * (
                truth.velocities[i - 1] + truth.velocities[i]
            )
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_noiseless_scenario_consistency_at_zero_error_state():
    cfg = urban_scenario(seed=5, n_epochs=4)
    cfg.noise = NoiseConfig(psr_a=0.0, psr_b=0.0, dopp=0.0, phase=0.0)
    cfg.outliers = OutlierConfig()
    cfg.clock = ClockConfig()
    cfg.anchor_error = 0.0
    records, truth = generate(cfg)
    graph = build_example1_graph(records, truth.layout, None, clock_sigma=0.1)
    zero = Values()
    for rec in records:
        zero.set(position_key(rec.epoch), np.zeros(3))
        zero.set(clock_key(rec.epoch, truth.layout.clock_dim), np.zeros(truth.layout.clock_dim))
    for f in graph.factors:
        np.testing.assert_allclose(evaluate_error(f, zero), 0.0, atol=1e-12)


def test_nlos_labels_recoverable():
    cfg = urban_scenario(seed=7, n_epochs=30)
    records, truth = generate(cfg)
    labeled = set(truth.nlos)
    layout = truth.layout
    for i, rec in enumerate(records):
        for obs in rec.sats:
            model = obs.los_unit @ (truth.positions[i] - rec.anchor_position) + layout.bias_row(
                obs.system
            ) @ truth.clocks[i]
            err = obs.psr_residual - model
            sigma = elevation_sigma(obs.elevation, cfg.noise.psr_a, cfg.noise.psr_b)
            if (i, obs.sat_id) in labeled:
                assert err >= cfg.outliers.nlos_bias_low - 6 * sigma
            else:
                assert abs(err) <= 6 * sigma
    assert len(labeled) > 0


def test_dd_arc_integers_constant_within_arcs():
    cfg = rtk_scenario(seed=11, n_epochs=25)
    records, truth = generate(cfg)
    assert truth.arcs
    for arc in truth.arcs:
        assert arc.ambiguity == int(arc.ambiguity)
        assert arc.start_epoch <= arc.end_epoch
    # arcs of one satellite never overlap
    by_sat = {}
    for arc in truth.arcs:
        by_sat.setdefault(arc.sat_id, []).append(arc)
    for arcs in by_sat.values():
        arcs.sort(key=lambda a: a.start_epoch)
        for a, b in zip(arcs[:-1], arcs[1:]):
            assert a.end_epoch < b.start_epoch


def test_slips_break_arcs_and_shift_tdcp():
    cfg = rtk_scenario(seed=13, n_epochs=40)
    records, truth = generate(cfg)
    slip_lookup = {(e, s): j for e, s, j in truth.slips}
    assert slip_lookup, "scenario should contain slips"
    for (epoch, sat_id), jump in slip_lookup.items():
        obs = records[epoch].sat(sat_id)
        assert obs.flags.cycle_slip
        arcs = [a for a in truth.arcs if a.sat_id == sat_id and a.start_epoch == epoch]
        assert len(arcs) == 1
        prev_arc = [a for a in truth.arcs if a.sat_id == sat_id and a.end_epoch == epoch - 1]
        assert len(prev_arc) == 1
        assert arcs[0].ambiguity == prev_arc[0].ambiguity + jump


def test_mass_slip_breaks_every_arc():
    cfg = rtk_scenario(seed=1, n_epochs=40)
    records, truth = generate(cfg)
    # find an epoch where every non-reference satellite slipped
    ref = records[0].reference_sat[SatSystem.GPS]
    by_epoch = {}
    for e, s, _ in truth.slips:
        by_epoch.setdefault(e, set()).add(s)
    n_track = len(records[0].sats) - 1
    mass_epochs = [e for e, sats in by_epoch.items() if len(sats) == n_track]
    assert mass_epochs, "expected at least one mass slip event"
    assert all(ref not in sats for sats in by_epoch.values())


def test_generate_errors():
    cfg = urban_scenario(seed=0, n_epochs=3)
    cfg.constellation = cfg.constellation[:3]
    with pytest.raises(ScenarioError, match="visible"):
        generate(cfg)
    with pytest.raises(ScenarioError):
        ScenarioConfig(n_epochs=0)
    with pytest.raises(ScenarioError):
        OutlierConfig(nlos_prob=1.5)
    with pytest.raises(ScenarioError):
        OutlierConfig(nlos_bias_low=-1.0)


def test_cycle_slip_jumps_within_range():
    cfg = rtk_scenario(seed=21, n_epochs=60)
    _, truth = generate(cfg)
    assert truth.slips
    for _, _, jump in truth.slips:
        assert 1 <= abs(jump) <= 5
