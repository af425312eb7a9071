"""Line-delimited JSON file formats: epochs, ground truth, solutions.

Each file starts with a header object naming the format and version,
followed by one JSON object per line. Floats are serialized with
shortest round-trip precision, so write/load is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .factors import EpochRecord, ObsFlags, SatObservation, SatSystem, SystemBiasLayout
from .scenario import ArcTruth, GroundTruth

EPOCH_FORMAT = "gnss-epochs"
TRUTH_FORMAT = "gnss-truth"
SOLUTION_FORMAT = "gnss-solution"
VERSION = 1


class FileFormatError(ValueError):
    pass


def _to_builtin(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _dump_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False, default=_to_builtin)


def _parse_line(line: str, lineno: int, path) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}:{lineno}: malformed line ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise FileFormatError(f"{path}:{lineno}: expected a JSON object")
    return obj


def _check_header(header: dict, expected_format: str, path) -> None:
    if header.get("format") != expected_format:
        raise FileFormatError(
            f"{path}:1: expected format {expected_format!r}, got {header.get('format')!r}"
        )
    if header.get("version") != VERSION:
        raise FileFormatError(
            f"{path}:1: unsupported version {header.get('version')!r} (supported: {VERSION})"
        )


def _layout_to_header(layout: SystemBiasLayout) -> dict:
    return {
        "reference_system": layout.reference_system.value,
        "other_systems": [s.value for s in layout.others],
    }


def _layout_from_header(header: dict) -> SystemBiasLayout:
    return SystemBiasLayout(
        reference_system=SatSystem(header.get("reference_system", "GPS")),
        others=tuple(SatSystem(s) for s in header.get("other_systems", [])),
    )


# ---------------------------------------------------------------------------
# Epoch files
# ---------------------------------------------------------------------------

def _obs_to_dict(obs: SatObservation) -> dict:
    return {
        "sat_id": obs.sat_id,
        "system": obs.system.value,
        "elevation": obs.elevation,
        "azimuth": obs.azimuth,
        "los_unit": list(obs.los_unit),
        "psr_residual": obs.psr_residual,
        "dopp_residual": obs.dopp_residual,
        "tdcp_residual": obs.tdcp_residual,
        "dd_carrier_residual": obs.dd_carrier_residual,
        "wavelength": obs.wavelength,
        "snr": obs.snr,
        "flags": {
            "has_psr": obs.flags.has_psr,
            "has_dopp": obs.flags.has_dopp,
            "has_tdcp": obs.flags.has_tdcp,
            "has_ddcp": obs.flags.has_ddcp,
            "cycle_slip": obs.flags.cycle_slip,
        },
    }


def _obs_from_dict(data: dict) -> SatObservation:
    flags = data.get("flags", {})
    return SatObservation(
        sat_id=data["sat_id"],
        system=SatSystem(data["system"]),
        elevation=float(data["elevation"]),
        azimuth=float(data["azimuth"]),
        los_unit=np.asarray(data["los_unit"], dtype=float),
        psr_residual=float(data["psr_residual"]),
        dopp_residual=float(data["dopp_residual"]),
        tdcp_residual=float(data["tdcp_residual"]),
        dd_carrier_residual=float(data["dd_carrier_residual"]),
        wavelength=float(data["wavelength"]),
        snr=float(data["snr"]),
        flags=ObsFlags(
            has_psr=bool(flags.get("has_psr", True)),
            has_dopp=bool(flags.get("has_dopp", False)),
            has_tdcp=bool(flags.get("has_tdcp", False)),
            has_ddcp=bool(flags.get("has_ddcp", False)),
            cycle_slip=bool(flags.get("cycle_slip", False)),
        ),
    )


def write_epoch_file(
    path,
    records: list[EpochRecord],
    layout: SystemBiasLayout,
    frame: str = "ENU",
    meta: dict | None = None,
) -> None:
    header = {
        "format": EPOCH_FORMAT,
        "version": VERSION,
        "frame": frame,
        **_layout_to_header(layout),
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump_line(header) + "\n")
        for rec in records:
            fh.write(
                _dump_line(
                    {
                        "epoch": rec.epoch,
                        "time": rec.time,
                        "anchor_position": list(rec.anchor_position),
                        "anchor_velocity": list(rec.anchor_velocity),
                        "dt_prev": rec.dt_prev,
                        "reference_sat": {k.value: v for k, v in rec.reference_sat.items()},
                        "sats": [_obs_to_dict(o) for o in rec.sats],
                    }
                )
                + "\n"
            )


def load_epoch_file(path) -> tuple[list[EpochRecord], SystemBiasLayout, dict]:
    path = Path(path)
    records: list[EpochRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty file (missing header)")
    header = _parse_line(lines[0], 1, path)
    _check_header(header, EPOCH_FORMAT, path)
    layout = _layout_from_header(header)
    last_epoch = -1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        data = _parse_line(line, lineno, path)
        try:
            rec = EpochRecord(
                epoch=int(data["epoch"]),
                time=float(data["time"]),
                anchor_position=np.asarray(data["anchor_position"], dtype=float),
                anchor_velocity=np.asarray(data["anchor_velocity"], dtype=float),
                dt_prev=float(data["dt_prev"]),
                sats=[_obs_from_dict(o) for o in data["sats"]],
                reference_sat={SatSystem(k): v for k, v in data.get("reference_sat", {}).items()},
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FileFormatError(f"{path}:{lineno}: bad record ({exc})") from None
        if rec.epoch <= last_epoch:
            raise FileFormatError(
                f"{path}:{lineno}: epochs must strictly increase "
                f"({rec.epoch} after {last_epoch})"
            )
        last_epoch = rec.epoch
        records.append(rec)
    return records, layout, header


def load_epochs(path) -> list[EpochRecord]:
    return load_epoch_file(path)[0]


# ---------------------------------------------------------------------------
# Ground-truth files
# ---------------------------------------------------------------------------

def write_truth_file(path, truth: GroundTruth, meta: dict | None = None) -> None:
    header = {
        "format": TRUTH_FORMAT,
        "version": VERSION,
        **_layout_to_header(truth.layout),
        "arcs": [
            {"sat_id": a.sat_id, "start": a.start_epoch, "end": a.end_epoch, "ambiguity": a.ambiguity}
            for a in truth.arcs
        ],
        "nlos": [[e, s] for e, s in truth.nlos],
        "slips": [[e, s, j] for e, s, j in truth.slips],
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump_line(header) + "\n")
        for i in range(truth.positions.shape[0]):
            fh.write(
                _dump_line(
                    {
                        "epoch": i,
                        "position": list(truth.positions[i]),
                        "velocity": list(truth.velocities[i]),
                        "clock": list(truth.clocks[i]),
                        "drift": truth.drifts[i],
                    }
                )
                + "\n"
            )


def load_truth_file(path) -> GroundTruth:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty file (missing header)")
    header = _parse_line(lines[0], 1, path)
    _check_header(header, TRUTH_FORMAT, path)
    layout = _layout_from_header(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rows.append(_parse_line(line, lineno, path))
    n = len(rows)
    clock_dim = layout.clock_dim
    truth = GroundTruth(
        positions=np.zeros((n, 3)),
        velocities=np.zeros((n, 3)),
        clocks=np.zeros((n, clock_dim)),
        drifts=np.zeros(n),
        layout=layout,
        arcs=[
            ArcTruth(a["sat_id"], int(a["start"]), int(a["end"]), int(a["ambiguity"]))
            for a in header.get("arcs", [])
        ],
        nlos=[(int(e), s) for e, s in header.get("nlos", [])],
        slips=[(int(e), s, int(j)) for e, s, j in header.get("slips", [])],
    )
    for i, row in enumerate(rows):
        truth.positions[i] = row["position"]
        truth.velocities[i] = row["velocity"]
        truth.clocks[i] = row["clock"]
        truth.drifts[i] = row["drift"]
    return truth


# ---------------------------------------------------------------------------
# Solution / estimate files
# ---------------------------------------------------------------------------

def write_solution_file(
    path,
    epochs: list[int],
    positions: np.ndarray,
    times: list[float] | None = None,
    meta: dict | None = None,
) -> None:
    header = {"format": SOLUTION_FORMAT, "version": VERSION, "meta": meta or {}}
    positions = np.asarray(positions, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump_line(header) + "\n")
        for i, epoch in enumerate(epochs):
            row = {"epoch": int(epoch), "position": list(positions[i])}
            if times is not None:
                row["time"] = times[i]
            fh.write(_dump_line(row) + "\n")


def load_positions(path) -> tuple[list[int], np.ndarray]:
    """Positions from a solution or truth file, ordered by appearance."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty file (missing header)")
    header = _parse_line(lines[0], 1, path)
    if header.get("format") not in (SOLUTION_FORMAT, TRUTH_FORMAT):
        raise FileFormatError(
            f"{path}:1: expected a {SOLUTION_FORMAT!r} or {TRUTH_FORMAT!r} file, "
            f"got {header.get('format')!r}"
        )
    if header.get("version") != VERSION:
        raise FileFormatError(f"{path}:1: unsupported version {header.get('version')!r}")
    epochs: list[int] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        data = _parse_line(line, lineno, path)
        try:
            epochs.append(int(data["epoch"]))
            rows.append([float(v) for v in data["position"]])
        except (KeyError, ValueError, TypeError) as exc:
            raise FileFormatError(f"{path}:{lineno}: bad row ({exc})") from None
    return epochs, np.asarray(rows, dtype=float)
