"""Synthetic GNSS scenario generator.

Satellites are placed at effective infinity: geometry enters only
through unit line-of-sight vectors derived from drifting azimuth and
elevation tracks, and every observable is synthesized directly in
residual space against the configured anchors. That keeps the generated
measurements exactly consistent with the linear factor models, so
noiseless scenarios are recovered to numerical precision.

All randomness flows from one seeded generator in a fixed iteration
order; a given config therefore produces byte-identical epoch files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .factors import EpochRecord, ObsFlags, SatObservation, SatSystem, SystemBiasLayout

GPS_L1_WAVELENGTH = 0.19029367279836487  # c / 1575.42 MHz

_MIN_VISIBLE_ELEVATION = 0.01  # rad; below this a satellite sets


class ScenarioError(ValueError):
    pass


@dataclass
class TrajectoryConfig:
    kind: str = "static"  # static | constant_velocity | waypoint_polyline
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    waypoints: list[tuple[float, float, float]] | None = None
    speed: float = 5.0


@dataclass
class SatelliteConfig:
    sat_id: str
    system: SatSystem = SatSystem.GPS
    azimuth: float = 0.0
    elevation: float = 0.8
    azimuth_rate: float = 0.0
    elevation_rate: float = 0.0
    snr: float = 45.0
    wavelength: float = GPS_L1_WAVELENGTH


@dataclass
class NoiseConfig:
    psr_a: float = 0.3
    psr_b: float = 0.3
    dopp: float = 0.05
    phase: float = 0.003


@dataclass
class OutlierConfig:
    nlos_prob: float = 0.0
    nlos_bias_low: float = 5.0
    nlos_bias_high: float = 50.0
    cycle_slip_prob: float = 0.0
    # Per-epoch probability that every tracked satellite slips at once
    # (underpass/viaduct events breaking all carrier arcs).
    mass_slip_prob: float = 0.0
    # With nlos_el_max set (radians), NLOS probability decreases linearly
    # with elevation and vanishes above it; per-epoch weights are
    # normalized so the mean observation still sees nlos_prob.
    nlos_el_max: float | None = None

    def __post_init__(self):
        if (
            not 0.0 <= self.nlos_prob <= 1.0
            or not 0.0 <= self.cycle_slip_prob <= 1.0
            or not 0.0 <= self.mass_slip_prob <= 1.0
        ):
            raise ScenarioError("probabilities must be in [0, 1]")
        if self.nlos_bias_low < 0 or self.nlos_bias_high < self.nlos_bias_low:
            raise ScenarioError("NLOS bias range must satisfy 0 <= low <= high")
        if self.nlos_el_max is not None and not self.nlos_el_max > 0:
            raise ScenarioError("nlos_el_max must be > 0")


@dataclass
class ClockConfig:
    offset: float = 0.0
    drift: float = 0.0
    random_walk: float = 0.0
    isb: dict[str, float] = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    n_epochs: int
    dt: float = 1.0
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    constellation: list[SatelliteConfig] = field(default_factory=list)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    outliers: OutlierConfig = field(default_factory=OutlierConfig)
    clock: ClockConfig = field(default_factory=ClockConfig)
    anchor_error: float = 0.0
    anchor_velocity_error: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_epochs < 1:
            raise ScenarioError("n_epochs must be >= 1")
        if not self.dt > 0:
            raise ScenarioError("dt must be > 0")


@dataclass
class ArcTruth:
    """One slip-free span of a satellite's double-difference ambiguity."""

    sat_id: str
    start_epoch: int
    end_epoch: int
    ambiguity: int


@dataclass
class GroundTruth:
    positions: np.ndarray  # (n_epochs, 3)
    velocities: np.ndarray  # (n_epochs, 3)
    clocks: np.ndarray  # (n_epochs, clock_dim)
    drifts: np.ndarray  # (n_epochs,)
    layout: SystemBiasLayout
    arcs: list[ArcTruth] = field(default_factory=list)
    nlos: list[tuple[int, str]] = field(default_factory=list)
    slips: list[tuple[int, str, int]] = field(default_factory=list)


def los_from_azel(azimuth: float, elevation: float) -> np.ndarray:
    """ENU unit vector pointing from receiver to satellite."""
    ce = math.cos(elevation)
    return np.array(
        [ce * math.sin(azimuth), ce * math.cos(azimuth), math.sin(elevation)]
    )


def elevation_sigma(elevation: float, a: float, b: float) -> float:
    """Elevation-dependent observation sigma sqrt(a^2 + b^2 / sin^2(el))."""
    if not elevation > 0:
        raise ValueError(f"elevation must be > 0, got {elevation}")
    s = math.sin(elevation)
    return math.sqrt(a * a + (b * b) / (s * s))


def apply_masks(record: EpochRecord, snr_min: float, el_min: float) -> EpochRecord:
    """Copy of the record without observations below either threshold."""
    kept = [s for s in record.sats if s.snr >= snr_min and s.elevation >= el_min]
    return EpochRecord(
        epoch=record.epoch,
        time=record.time,
        anchor_position=record.anchor_position.copy(),
        anchor_velocity=record.anchor_velocity.copy(),
        dt_prev=record.dt_prev,
        sats=kept,
        reference_sat=dict(record.reference_sat),
    )


def _trajectory_states(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Truth positions and velocities; positions are the trapezoidal
    integral of the velocity profile so motion ties hold exactly."""
    n = cfg.n_epochs
    traj = cfg.trajectory
    vel = np.zeros((n, 3))
    if traj.kind == "static":
        pass
    elif traj.kind == "constant_velocity":
        vel[:] = np.asarray(traj.velocity, dtype=float)
    elif traj.kind == "waypoint_polyline":
        wps = [np.asarray(w, dtype=float) for w in (traj.waypoints or [])]
        if len(wps) < 2:
            raise ScenarioError("waypoint_polyline needs at least two waypoints")
        if not traj.speed > 0:
            raise ScenarioError("waypoint speed must be > 0")
        seg_dirs = []
        seg_ends = []
        t_acc = 0.0
        for a, b in zip(wps[:-1], wps[1:]):
            seg = b - a
            length = float(np.linalg.norm(seg))
            if length <= 0:
                raise ScenarioError("degenerate polyline segment")
            t_acc += length / traj.speed
            seg_dirs.append(seg / length)
            seg_ends.append(t_acc)
        for i in range(n):
            t = i * cfg.dt
            k = 0
            while k < len(seg_ends) - 1 and t >= seg_ends[k]:
                k += 1
            if t < seg_ends[-1]:
                vel[i] = seg_dirs[k] * traj.speed
            # past the final waypoint the receiver stops
    else:
        raise ScenarioError(f"unknown trajectory kind {traj.kind!r}")

    pos = np.zeros((n, 3))
    pos[0] = np.asarray(traj.position, dtype=float)
    if traj.kind == "waypoint_polyline":
        pos[0] = np.asarray((traj.waypoints or [traj.position])[0], dtype=float)
    for i in range(1, n):
        pos[i] = pos[i - 1] + cfg.dt * 0.5 * (vel[i - 1] + vel[i])
    return pos, vel


def _visible(el: float) -> bool:
    return el > _MIN_VISIBLE_ELEVATION


def _sat_elevation(sat: SatelliteConfig, t: float) -> float:
    return min(sat.elevation + sat.elevation_rate * t, math.pi / 2)


def generate(cfg: ScenarioConfig) -> tuple[list[EpochRecord], GroundTruth]:
    """Produce epoch records plus ground truth for one scenario."""
    if not cfg.constellation:
        raise ScenarioError("constellation is empty")
    ids = [s.sat_id for s in cfg.constellation]
    if len(ids) != len(set(ids)):
        raise ScenarioError("duplicate sat_ids in constellation")

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_epochs
    layout = SystemBiasLayout.for_systems([s.system for s in cfg.constellation])

    pos, vel = _trajectory_states(cfg)

    drifts = np.full(n, cfg.clock.drift)
    clocks = np.zeros((n, layout.clock_dim))
    clocks[0, 0] = cfg.clock.offset
    for i in range(1, n):
        walk = cfg.clock.random_walk * math.sqrt(cfg.dt) * rng.standard_normal() if cfg.clock.random_walk > 0 else 0.0
        clocks[i, 0] = clocks[i - 1, 0] + cfg.dt * 0.5 * (drifts[i - 1] + drifts[i]) + walk
    for j, system in enumerate(layout.others):
        clocks[:, 1 + j] = cfg.clock.isb.get(system.value, 0.0)

    anchors_pos = pos.copy()
    anchors_vel = vel.copy()
    if cfg.anchor_error > 0:
        anchors_pos = pos + cfg.anchor_error * rng.standard_normal((n, 3))
    if cfg.anchor_velocity_error > 0:
        anchors_vel = vel + cfg.anchor_velocity_error * rng.standard_normal((n, 3))

    # Per-satellite tracks: geometry, visibility, noise draws.
    times = np.arange(n) * cfg.dt
    los: dict[str, np.ndarray] = {}
    elev: dict[str, np.ndarray] = {}
    azim: dict[str, np.ndarray] = {}
    visible: dict[str, np.ndarray] = {}
    phase_noise: dict[str, np.ndarray] = {}
    for sat in cfg.constellation:
        el = np.array([_sat_elevation(sat, t) for t in times])
        az = sat.azimuth + sat.azimuth_rate * times
        vis = el > _MIN_VISIBLE_ELEVATION
        u = np.zeros((n, 3))
        for i in range(n):
            if vis[i]:
                u[i] = los_from_azel(az[i], el[i])
        los[sat.sat_id] = u
        elev[sat.sat_id] = el
        azim[sat.sat_id] = az
        visible[sat.sat_id] = vis
        phase_noise[sat.sat_id] = (
            cfg.noise.phase * rng.standard_normal(n) if cfg.noise.phase > 0 else np.zeros(n)
        )

    # Reference satellite per system: widest coverage, then highest mean
    # elevation. Reference satellites never slip so DD arcs stay simple.
    reference: dict[SatSystem, str] = {}
    for system in [layout.reference_system, *layout.others]:
        members = [s for s in cfg.constellation if s.system == system]
        if not members:
            continue
        best = max(
            members,
            key=lambda s: (int(np.sum(visible[s.sat_id])), float(np.mean(elev[s.sat_id]))),
        )
        reference[system] = best.sat_id

    # Slip events and DD ambiguity arcs per non-reference satellite.
    mass_slip = np.zeros(n, dtype=bool)
    if cfg.outliers.mass_slip_prob > 0:
        mass_slip[1:] = rng.random(n - 1) < cfg.outliers.mass_slip_prob
    slip_jump: dict[str, np.ndarray] = {s.sat_id: np.zeros(n, dtype=np.int64) for s in cfg.constellation}
    arcs: list[ArcTruth] = []
    slips: list[tuple[int, str, int]] = []
    arc_of: dict[str, np.ndarray] = {}
    for sat in cfg.constellation:
        sid = sat.sat_id
        arc_idx = np.full(n, -1, dtype=np.int64)
        if reference.get(sat.system) == sid:
            arc_of[sid] = arc_idx
            continue
        current: ArcTruth | None = None
        for i in range(n):
            if not visible[sid][i]:
                current = None
                continue
            slipped = False
            if i > 0 and visible[sid][i - 1]:
                if cfg.outliers.cycle_slip_prob > 0 and rng.random() < cfg.outliers.cycle_slip_prob:
                    slipped = True
                slipped = slipped or bool(mass_slip[i])
            if current is None or slipped or not visible[sid][i - 1]:
                if slipped and current is not None:
                    jump = int(rng.integers(1, 6)) * (1 if rng.random() < 0.5 else -1)
                    slip_jump[sid][i] = jump
                    slips.append((i, sid, jump))
                    amb = current.ambiguity + jump
                else:
                    amb = int(rng.integers(-20, 21))
                current = ArcTruth(sid, i, i, amb)
                arcs.append(current)
            else:
                current.end_epoch = i
            arc_idx[i] = len(arcs) - 1
        arc_of[sid] = arc_idx

    nlos: list[tuple[int, str]] = []
    records: list[EpochRecord] = []
    order = sorted(cfg.constellation, key=lambda s: s.sat_id)
    for i in range(n):
        nlos_prob: dict[str, float] = {}
        if cfg.outliers.nlos_prob > 0:
            vis_now = [s for s in order if visible[s.sat_id][i]]
            if cfg.outliers.nlos_el_max is None:
                nlos_prob = {s.sat_id: cfg.outliers.nlos_prob for s in vis_now}
            else:
                weights = {
                    s.sat_id: max(0.0, 1.0 - elev[s.sat_id][i] / cfg.outliers.nlos_el_max)
                    for s in vis_now
                }
                mean_w = sum(weights.values()) / max(len(weights), 1)
                if mean_w > 0:
                    nlos_prob = {
                        sid: min(0.95, cfg.outliers.nlos_prob * w / mean_w)
                        for sid, w in weights.items()
                    }
        sats: list[SatObservation] = []
        for sat in order:
            sid = sat.sat_id
            if not visible[sid][i]:
                continue
            u = los[sid][i]
            bias_row = layout.bias_row(sat.system)
            sig_psr = elevation_sigma(elev[sid][i], cfg.noise.psr_a, cfg.noise.psr_b)
            psr = float(
                u @ (pos[i] - anchors_pos[i])
                + bias_row @ clocks[i]
                + (sig_psr * rng.standard_normal() if sig_psr > 0 else 0.0)
            )
            is_nlos = cfg.outliers.nlos_prob > 0 and rng.random() < nlos_prob.get(sid, 0.0)
            if is_nlos:
                psr += float(rng.uniform(cfg.outliers.nlos_bias_low, cfg.outliers.nlos_bias_high))
                nlos.append((i, sid))
            dopp = float(
                u @ vel[i]
                + drifts[i]
                + (cfg.noise.dopp * rng.standard_normal() if cfg.noise.dopp > 0 else 0.0)
            )

            flags = ObsFlags(has_psr=True, has_dopp=True)
            tdcp = 0.0
            if i > 0 and visible[sid][i - 1]:
                u_prev = los[sid][i - 1]
                tdcp = float(
                    u @ (pos[i] - anchors_pos[i - 1])
                    - u_prev @ (pos[i - 1] - anchors_pos[i - 1])
                    + bias_row @ (clocks[i] - clocks[i - 1])
                    + sat.wavelength * slip_jump[sid][i]
                    + phase_noise[sid][i]
                    - phase_noise[sid][i - 1]
                )
                flags.has_tdcp = True
                flags.cycle_slip = slip_jump[sid][i] != 0

            ddcp = 0.0
            ref_id = reference.get(sat.system)
            if ref_id is not None and ref_id != sid and visible[ref_id][i]:
                u_ref = los[ref_id][i]
                arc = arcs[arc_of[sid][i]]
                ddcp = float(
                    (u - u_ref) @ (pos[i] - anchors_pos[i])
                    + sat.wavelength * arc.ambiguity
                    + phase_noise[sid][i]
                    - phase_noise[ref_id][i]
                )
                flags.has_ddcp = True

            sats.append(
                SatObservation(
                    sat_id=sid,
                    system=sat.system,
                    elevation=float(elev[sid][i]),
                    azimuth=float(azim[sid][i]),
                    los_unit=u,
                    psr_residual=psr,
                    dopp_residual=dopp,
                    tdcp_residual=tdcp,
                    dd_carrier_residual=ddcp,
                    wavelength=sat.wavelength,
                    snr=sat.snr,
                    flags=flags,
                )
            )
        if len(sats) < 4:
            raise ScenarioError(
                f"epoch {i}: only {len(sats)} visible satellites (>= 4 required)"
            )
        records.append(
            EpochRecord(
                epoch=i,
                time=float(times[i]),
                anchor_position=anchors_pos[i],
                anchor_velocity=anchors_vel[i],
                dt_prev=cfg.dt if i > 0 else 0.0,
                sats=sats,
                reference_sat=dict(reference),
            )
        )

    truth = GroundTruth(
        positions=pos,
        velocities=vel,
        clocks=clocks,
        drifts=drifts,
        layout=layout,
        arcs=arcs,
        nlos=nlos,
        slips=slips,
    )
    return records, truth


# ---------------------------------------------------------------------------
# Config (de)serialization
# ---------------------------------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "n_epochs": cfg.n_epochs,
        "dt": cfg.dt,
        "trajectory": {
            "kind": cfg.trajectory.kind,
            "position": list(cfg.trajectory.position),
            "velocity": list(cfg.trajectory.velocity),
            "waypoints": [list(w) for w in cfg.trajectory.waypoints] if cfg.trajectory.waypoints else None,
            "speed": cfg.trajectory.speed,
        },
        "constellation": [
            {
                "sat_id": s.sat_id,
                "system": s.system.value,
                "azimuth": s.azimuth,
                "elevation": s.elevation,
                "azimuth_rate": s.azimuth_rate,
                "elevation_rate": s.elevation_rate,
                "snr": s.snr,
                "wavelength": s.wavelength,
            }
            for s in cfg.constellation
        ],
        "noise": {
            "psr_a": cfg.noise.psr_a,
            "psr_b": cfg.noise.psr_b,
            "dopp": cfg.noise.dopp,
            "phase": cfg.noise.phase,
        },
        "outliers": {
            "nlos_prob": cfg.outliers.nlos_prob,
            "nlos_bias_low": cfg.outliers.nlos_bias_low,
            "nlos_bias_high": cfg.outliers.nlos_bias_high,
            "cycle_slip_prob": cfg.outliers.cycle_slip_prob,
            "mass_slip_prob": cfg.outliers.mass_slip_prob,
            "nlos_el_max": cfg.outliers.nlos_el_max,
        },
        "clock": {
            "offset": cfg.clock.offset,
            "drift": cfg.clock.drift,
            "random_walk": cfg.clock.random_walk,
            "isb": dict(cfg.clock.isb),
        },
        "anchor_error": cfg.anchor_error,
        "anchor_velocity_error": cfg.anchor_velocity_error,
        "seed": cfg.seed,
    }


def scenario_from_dict(data: dict) -> ScenarioConfig:
    traj = data.get("trajectory", {})
    noise = data.get("noise", {})
    outliers = data.get("outliers", {})
    clock = data.get("clock", {})
    return ScenarioConfig(
        n_epochs=int(data["n_epochs"]),
        dt=float(data.get("dt", 1.0)),
        trajectory=TrajectoryConfig(
            kind=traj.get("kind", "static"),
            position=tuple(traj.get("position", (0.0, 0.0, 0.0))),
            velocity=tuple(traj.get("velocity", (0.0, 0.0, 0.0))),
            waypoints=[tuple(w) for w in traj["waypoints"]] if traj.get("waypoints") else None,
            speed=float(traj.get("speed", 5.0)),
        ),
        constellation=[
            SatelliteConfig(
                sat_id=s["sat_id"],
                system=SatSystem(s.get("system", "GPS")),
                azimuth=float(s.get("azimuth", 0.0)),
                elevation=float(s.get("elevation", 0.8)),
                azimuth_rate=float(s.get("azimuth_rate", 0.0)),
                elevation_rate=float(s.get("elevation_rate", 0.0)),
                snr=float(s.get("snr", 45.0)),
                wavelength=float(s.get("wavelength", GPS_L1_WAVELENGTH)),
            )
            for s in data.get("constellation", [])
        ],
        noise=NoiseConfig(
            psr_a=float(noise.get("psr_a", 0.3)),
            psr_b=float(noise.get("psr_b", 0.3)),
            dopp=float(noise.get("dopp", 0.05)),
            phase=float(noise.get("phase", 0.003)),
        ),
        outliers=OutlierConfig(
            nlos_prob=float(outliers.get("nlos_prob", 0.0)),
            nlos_bias_low=float(outliers.get("nlos_bias_low", 5.0)),
            nlos_bias_high=float(outliers.get("nlos_bias_high", 50.0)),
            cycle_slip_prob=float(outliers.get("cycle_slip_prob", 0.0)),
            mass_slip_prob=float(outliers.get("mass_slip_prob", 0.0)),
            nlos_el_max=(
                float(outliers["nlos_el_max"]) if outliers.get("nlos_el_max") is not None else None
            ),
        ),
        clock=ClockConfig(
            offset=float(clock.get("offset", 0.0)),
            drift=float(clock.get("drift", 0.0)),
            random_walk=float(clock.get("random_walk", 0.0)),
            isb={k: float(v) for k, v in clock.get("isb", {}).items()},
        ),
        anchor_error=float(data.get("anchor_error", 0.0)),
        anchor_velocity_error=float(data.get("anchor_velocity_error", 0.0)),
        seed=int(data.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# Stock scenarios for the example pipelines
# ---------------------------------------------------------------------------

def spread_constellation(
    n_sats: int,
    systems: tuple[SatSystem, ...] = (SatSystem.GPS,),
    el_range: tuple[float, float] = (0.35, 1.25),
    snr: float = 45.0,
    azimuth_rate: float = 5e-4,
    elevation_rate: float = 2e-4,
) -> list[SatelliteConfig]:
    """Evenly spread satellites in azimuth with staggered elevations."""
    sats = []
    el_lo, el_hi = el_range
    stride = max(1, (n_sats // 2) - 1)
    while n_sats > 1 and math.gcd(stride, n_sats) != 1:
        stride += 1
    for i in range(n_sats):
        system = systems[i % len(systems)]
        frac = ((i * stride) % n_sats) / max(n_sats - 1, 1)
        sats.append(
            SatelliteConfig(
                sat_id=f"{system.value[0]}{i + 1:02d}",
                system=system,
                azimuth=2 * math.pi * i / n_sats,
                elevation=el_lo + (el_hi - el_lo) * frac,
                azimuth_rate=azimuth_rate * (1 if i % 2 == 0 else -1),
                elevation_rate=elevation_rate * (1 if i % 3 != 0 else -1),
                snr=snr,
            )
        )
    return sats


def urban_scenario(seed: int, n_epochs: int = 200, n_sats: int = 12) -> ScenarioConfig:
    """Urban single-point positioning: NLOS-contaminated pseudoranges.

    NLOS hits are elevation-shaped (low satellites suffer most) with the
    overall contamination rate kept at 20% of observations.
    """
    return ScenarioConfig(
        n_epochs=n_epochs,
        dt=1.0,
        trajectory=TrajectoryConfig(kind="constant_velocity", velocity=(8.0, 3.0, 0.0)),
        constellation=spread_constellation(
            n_sats, systems=(SatSystem.GPS, SatSystem.GAL), el_range=(0.4, 1.35)
        ),
        noise=NoiseConfig(psr_a=0.3, psr_b=0.3, dopp=0.05, phase=0.003),
        outliers=OutlierConfig(
            nlos_prob=0.2,
            nlos_bias_low=5.0,
            nlos_bias_high=50.0,
            nlos_el_max=math.radians(60.0),
        ),
        clock=ClockConfig(offset=12.0, drift=0.0, random_walk=0.05, isb={"GAL": 3.5}),
        anchor_error=2.0,
        seed=seed,
    )


def rtk_scenario(seed: int, n_epochs: int = 40, n_sats: int = 7) -> ScenarioConfig:
    """Carrier-phase scenario for ambiguity resolution comparisons.

    Mass slip events periodically break every carrier arc, so models
    without inter-epoch ties must re-estimate ambiguities from short
    segments.
    """
    return ScenarioConfig(
        n_epochs=n_epochs,
        dt=1.0,
        trajectory=TrajectoryConfig(kind="constant_velocity", velocity=(1.5, -1.0, 0.0)),
        constellation=spread_constellation(
            n_sats,
            systems=(SatSystem.GPS,),
            el_range=(0.38, 1.3),
            azimuth_rate=2e-3,
            elevation_rate=8e-4,
        ),
        noise=NoiseConfig(psr_a=0.3, psr_b=0.3, dopp=0.02, phase=0.003),
        outliers=OutlierConfig(cycle_slip_prob=0.005, mass_slip_prob=0.12),
        clock=ClockConfig(offset=5.0, drift=0.2, random_walk=0.01),
        anchor_error=1.0,
        seed=seed,
    )
