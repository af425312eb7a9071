import json

import numpy as np
import pytest

from gnssfgo.epochfile import (
    FileFormatError,
    load_epoch_file,
    load_epochs,
    load_positions,
    load_truth_file,
    write_epoch_file,
    write_solution_file,
    write_truth_file,
)
from gnssfgo.factors import SatSystem, SystemBiasLayout
from gnssfgo.scenario import generate, urban_scenario


@pytest.fixture()
def sample(tmp_path):
    cfg = urban_scenario(seed=4, n_epochs=10)
    records, truth = generate(cfg)
    path = tmp_path / "epochs.jsonl"
    write_epoch_file(path, records, truth.layout, meta={"seed": 4})
    return path, records, truth


def test_round_trip_identity(sample):
    path, records, truth = sample
    loaded, layout, header = load_epoch_file(path)
    assert layout == truth.layout
    assert header["meta"]["seed"] == 4
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert a.epoch == b.epoch
        assert a.dt_prev == b.dt_prev
        np.testing.assert_array_equal(a.anchor_position, b.anchor_position)
        np.testing.assert_array_equal(a.anchor_velocity, b.anchor_velocity)
        assert a.reference_sat == b.reference_sat
        for sa, sb in zip(a.sats, b.sats):
            assert sa.sat_id == sb.sat_id and sa.system == sb.system
            assert sa.psr_residual == sb.psr_residual
            assert sa.dopp_residual == sb.dopp_residual
            assert sa.tdcp_residual == sb.tdcp_residual
            assert sa.dd_carrier_residual == sb.dd_carrier_residual
            assert sa.wavelength == sb.wavelength
            np.testing.assert_array_equal(sa.los_unit, sb.los_unit)
            assert vars(sa.flags) == vars(sb.flags)


def test_write_same_bytes_for_same_seed(tmp_path):
    paths = []
    for name in ("a.jsonl", "b.jsonl"):
        records, truth = generate(urban_scenario(seed=9, n_epochs=6))
        p = tmp_path / name
        write_epoch_file(p, records, truth.layout)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]


def test_empty_record_list(tmp_path):
    path = tmp_path / "empty.jsonl"
    layout = SystemBiasLayout(SatSystem.GPS, ())
    write_epoch_file(path, [], layout)
    assert load_epochs(path) == []


def test_malformed_line_names_line_number(sample, tmp_path):
    path, _, _ = sample
    lines = path.read_text().splitlines()
    broken = tmp_path / "broken.jsonl"
    truncated = lines[:4] + [lines[4][: len(lines[4]) // 2]]
    broken.write_text("\n".join(truncated) + "\n")
    with pytest.raises(FileFormatError, match=r"broken\.jsonl:5"):
        load_epochs(broken)


def test_unknown_version_rejected(sample, tmp_path):
    path, _, _ = sample
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 99
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(FileFormatError, match="version"):
        load_epochs(bad)


def test_wrong_format_rejected(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text(json.dumps({"format": "something-else", "version": 1}) + "\n")
    with pytest.raises(FileFormatError, match="format"):
        load_epochs(p)


def test_epochs_must_increase(sample, tmp_path):
    path, _, _ = sample
    lines = path.read_text().splitlines()
    dup = tmp_path / "dup.jsonl"
    dup.write_text("\n".join([lines[0], lines[1], lines[1]]) + "\n")
    with pytest.raises(FileFormatError, match="increase"):
        load_epochs(dup)


def test_truth_round_trip(sample, tmp_path):
    _, _, truth = sample
    p = tmp_path / "truth.jsonl"
    write_truth_file(p, truth)
    loaded = load_truth_file(p)
    np.testing.assert_array_equal(loaded.positions, truth.positions)
    np.testing.assert_array_equal(loaded.velocities, truth.velocities)
    np.testing.assert_array_equal(loaded.clocks, truth.clocks)
    np.testing.assert_array_equal(loaded.drifts, truth.drifts)
    assert loaded.layout == truth.layout
    assert loaded.nlos == truth.nlos
    assert loaded.slips == truth.slips
    assert [vars(a) for a in loaded.arcs] == [vars(a) for a in truth.arcs]


def test_solution_file_and_position_loader(sample, tmp_path):
    _, records, truth = sample
    sol = tmp_path / "solution.jsonl"
    positions = truth.positions + 0.25
    write_solution_file(sol, [r.epoch for r in records], positions)
    epochs, loaded = load_positions(sol)
    assert epochs == [r.epoch for r in records]
    np.testing.assert_array_equal(loaded, positions)
    # truth files also serve as position sources
    tr = tmp_path / "truth.jsonl"
    write_truth_file(tr, truth)
    _, from_truth = load_positions(tr)
    np.testing.assert_array_equal(from_truth, truth.positions)
