"""Constructors turning preprocessed GNSS observations into linear factors.

Observations arrive as residuals evaluated at per-epoch anchor positions
together with unit line-of-sight vectors, so every factor here is linear
with constant jacobian blocks. Time-difference factors fold the anchor
difference between the two epochs into their constant term.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    Anchor,
    Factor,
    VariableKey,
    ambiguity_key,
    clock_key,
    drift_key,
    position_key,
    velocity_key,
)
from .robust import RobustKernel


class SatSystem(enum.Enum):
    GPS = "GPS"
    GLO = "GLO"
    GAL = "GAL"
    BDS = "BDS"
    QZS = "QZS"


@dataclass
class ObsFlags:
    has_psr: bool = True
    has_dopp: bool = False
    has_tdcp: bool = False
    has_ddcp: bool = False
    cycle_slip: bool = False


@dataclass
class SatObservation:
    """One satellite's preprocessed measurements at one epoch.

    Residual fields are measurement minus model evaluated at the epoch's
    anchor; time-difference residuals (tdcp) for the pair (i-1, i) are
    evaluated at the previous epoch's anchor.
    """

    sat_id: str
    system: SatSystem
    elevation: float
    azimuth: float
    los_unit: np.ndarray
    psr_residual: float = 0.0
    dopp_residual: float = 0.0
    tdcp_residual: float = 0.0
    dd_carrier_residual: float = 0.0
    wavelength: float = 0.0
    snr: float = 45.0
    flags: ObsFlags = field(default_factory=ObsFlags)

    def __post_init__(self):
        self.los_unit = np.asarray(self.los_unit, dtype=float).reshape(3)
        norm = float(np.linalg.norm(self.los_unit))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"los_unit must have unit norm, got |u| = {norm}")
        if not (0.0 < self.elevation <= math.pi / 2 + 1e-12):
            raise ValueError(f"elevation must be in (0, pi/2], got {self.elevation}")
        if (self.flags.has_tdcp or self.flags.has_ddcp) and not self.wavelength > 0:
            raise ValueError(f"carrier observation on {self.sat_id} requires wavelength > 0")


@dataclass
class EpochRecord:
    """One epoch of observations plus its anchor state."""

    epoch: int
    time: float
    anchor_position: np.ndarray
    anchor_velocity: np.ndarray
    dt_prev: float
    sats: list[SatObservation]
    reference_sat: dict[SatSystem, str] = field(default_factory=dict)

    def __post_init__(self):
        self.anchor_position = np.asarray(self.anchor_position, dtype=float).reshape(3)
        self.anchor_velocity = np.asarray(self.anchor_velocity, dtype=float).reshape(3)
        if self.epoch > 0 and not self.dt_prev > 0:
            raise ValueError(f"epoch {self.epoch}: dt_prev must be > 0")
        ids = [s.sat_id for s in self.sats]
        if len(ids) != len(set(ids)):
            raise ValueError(f"epoch {self.epoch}: duplicate sat_ids")

    @property
    def anchor(self) -> Anchor:
        return Anchor(self.anchor_position, self.anchor_velocity)

    def sat(self, sat_id: str) -> SatObservation:
        for obs in self.sats:
            if obs.sat_id == sat_id:
                return obs
        raise KeyError(f"epoch {self.epoch}: no observation for {sat_id}")


@dataclass(frozen=True)
class SystemBiasLayout:
    """Clock-state layout: receiver clock plus one bias per extra system."""

    reference_system: SatSystem = SatSystem.GPS
    others: tuple[SatSystem, ...] = ()

    def __post_init__(self):
        if self.reference_system in self.others:
            raise ValueError("reference system cannot also be listed in others")
        if len(set(self.others)) != len(self.others):
            raise ValueError("duplicate systems in layout")

    @property
    def clock_dim(self) -> int:
        return 1 + len(self.others)

    def bias_row(self, system: SatSystem) -> np.ndarray:
        """Observation row for the clock block: leading 1 for the receiver
        clock, a second 1 in the slot of a non-reference system."""
        row = np.zeros(self.clock_dim)
        row[0] = 1.0
        if system != self.reference_system:
            if system not in self.others:
                raise ValueError(f"system {system.value} not covered by layout")
            row[1 + self.others.index(system)] = 1.0
        return row

    @staticmethod
    def for_systems(systems, reference: SatSystem = SatSystem.GPS) -> "SystemBiasLayout":
        others = tuple(sorted((s for s in set(systems) if s != reference), key=lambda s: s.value))
        return SystemBiasLayout(reference, others)


def _sigma_vec(sigma, rows: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(sigma, dtype=float))
    if arr.shape == (1,) and rows > 1:
        arr = np.full(rows, arr[0])
    if arr.shape != (rows,):
        raise ValueError(f"sigma must be scalar or length {rows}")
    return arr


def _check_pair(obs: SatObservation, ref: SatObservation, allow_cross_system: bool) -> None:
    if obs.sat_id == ref.sat_id:
        raise ValueError(f"cannot difference {obs.sat_id} against itself")
    if obs.system != ref.system and not allow_cross_system:
        raise ValueError(
            f"cross-system difference {obs.system.value}/{ref.system.value} disabled; "
            "system biases would leak into the residual"
        )


def pseudorange_factor(
    obs: SatObservation,
    epoch: int,
    layout: SystemBiasLayout,
    sigma: float,
    kernel: RobustKernel | None = None,
) -> Factor:
    """Single-point pseudorange: constrains (position error, clock)."""
    if not obs.flags.has_psr:
        raise ValueError(f"{obs.sat_id}: missing pseudorange")
    return Factor(
        keys=(position_key(epoch), clock_key(epoch, layout.clock_dim)),
        jacobians=(obs.los_unit[None, :], layout.bias_row(obs.system)[None, :]),
        constant=[obs.psr_residual],
        sigma=[sigma],
        kernel=kernel,
    )


def pseudorange_sd_factor(
    obs: SatObservation,
    ref: SatObservation,
    epoch: int,
    sigma: float,
    kernel: RobustKernel | None = None,
    allow_cross_system: bool = False,
) -> Factor:
    """Satellite-differenced pseudorange: clock eliminated."""
    if not (obs.flags.has_psr and ref.flags.has_psr):
        raise ValueError("both observations need a pseudorange")
    _check_pair(obs, ref, allow_cross_system)
    return Factor(
        keys=(position_key(epoch),),
        jacobians=((obs.los_unit - ref.los_unit)[None, :],),
        constant=[obs.psr_residual - ref.psr_residual],
        sigma=[sigma],
        kernel=kernel,
    )


def doppler_velocity_factor(
    obs: SatObservation,
    epoch: int,
    anchor_velocity,
    sigma: float,
    kernel: RobustKernel | None = None,
) -> Factor:
    """Doppler range-rate: constrains (velocity error, clock drift)."""
    if not obs.flags.has_dopp:
        raise ValueError(f"{obs.sat_id}: missing doppler")
    v0 = np.asarray(anchor_velocity, dtype=float).reshape(3)
    return Factor(
        keys=(velocity_key(epoch), drift_key(epoch)),
        jacobians=(obs.los_unit[None, :], np.ones((1, 1))),
        constant=[obs.dopp_residual - float(obs.los_unit @ v0)],
        sigma=[sigma],
        kernel=kernel,
    )


def doppler_velocity_sd_factor(
    obs: SatObservation,
    ref: SatObservation,
    epoch: int,
    anchor_velocity,
    sigma: float,
    kernel: RobustKernel | None = None,
    allow_cross_system: bool = False,
) -> Factor:
    """Satellite-differenced Doppler: clock drift eliminated."""
    if not (obs.flags.has_dopp and ref.flags.has_dopp):
        raise ValueError("both observations need a doppler")
    _check_pair(obs, ref, allow_cross_system)
    v0 = np.asarray(anchor_velocity, dtype=float).reshape(3)
    dlos = obs.los_unit - ref.los_unit
    return Factor(
        keys=(velocity_key(epoch),),
        jacobians=(dlos[None, :],),
        constant=[obs.dopp_residual - ref.dopp_residual - float(dlos @ v0)],
        sigma=[sigma],
        kernel=kernel,
    )


def doppler_tdpos_factor(
    obs_prev: SatObservation,
    obs_cur: SatObservation,
    epoch_pair: tuple[int, int],
    dt: float,
    anchor_prev: Anchor,
    anchor_cur: Anchor,
    sigma: float,
    layout: SystemBiasLayout | None = None,
    kernel: RobustKernel | None = None,
) -> Factor:
    """Epoch-averaged Doppler as a relative-position constraint.

    Uses the unnormalized mean line of sight of the two epochs so the
    trapezoidal displacement of a constant-velocity receiver is matched
    exactly. With ``layout`` given, the clock-change term of the
    averaged observation is absorbed by clock states (otherwise the
    caller should pass satellite-differenced observations).
    """
    prev_epoch, cur_epoch = epoch_pair
    if prev_epoch < 0:
        raise ValueError("time-difference factor needs a predecessor epoch")
    if prev_epoch >= cur_epoch:
        raise ValueError(f"epoch pair must increase, got {epoch_pair}")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not (obs_prev.flags.has_dopp and obs_cur.flags.has_dopp):
        raise ValueError("both epochs need a doppler")
    if obs_prev.sat_id != obs_cur.sat_id:
        raise ValueError("epoch pair must observe the same satellite")
    los = 0.5 * (obs_prev.los_unit + obs_cur.los_unit)
    avg_res = 0.5 * (obs_prev.dopp_residual + obs_cur.dopp_residual)
    danchor = anchor_cur.position - anchor_prev.position
    const = dt * avg_res - float(los @ danchor)
    keys: list[VariableKey] = [position_key(prev_epoch), position_key(cur_epoch)]
    jacs: list[np.ndarray] = [-los[None, :], los[None, :]]
    if layout is not None:
        row = layout.bias_row(obs_cur.system)[None, :]
        keys += [clock_key(prev_epoch, layout.clock_dim), clock_key(cur_epoch, layout.clock_dim)]
        jacs += [-row, row]
    return Factor(keys=tuple(keys), jacobians=tuple(jacs), constant=[const], sigma=[sigma], kernel=kernel)


def tdcp_factor(
    obs: SatObservation,
    epoch_pair: tuple[int, int],
    anchor_prev: Anchor,
    anchor_cur: Anchor,
    layout: SystemBiasLayout,
    sigma: float,
    kernel: RobustKernel | None = None,
) -> Factor:
    """Time-differenced carrier phase constraining relative position and
    clock change. ``obs`` is the current epoch's observation carrying the
    pair residual evaluated at the previous epoch's anchor."""
    prev_epoch, cur_epoch = epoch_pair
    if prev_epoch < 0 or prev_epoch >= cur_epoch:
        raise ValueError(f"bad epoch pair {epoch_pair}")
    if not obs.flags.has_tdcp:
        raise ValueError(f"{obs.sat_id}: missing tdcp")
    if not obs.wavelength > 0:
        raise ValueError(f"{obs.sat_id}: missing wavelength")
    los = obs.los_unit
    const = obs.tdcp_residual - float(los @ (anchor_cur.position - anchor_prev.position))
    row = layout.bias_row(obs.system)[None, :]
    return Factor(
        keys=(
            position_key(prev_epoch),
            position_key(cur_epoch),
            clock_key(prev_epoch, layout.clock_dim),
            clock_key(cur_epoch, layout.clock_dim),
        ),
        jacobians=(-los[None, :], los[None, :], -row, row),
        constant=[const],
        sigma=[sigma],
        kernel=kernel,
    )


def tdcp_sd_factor(
    obs: SatObservation,
    ref: SatObservation,
    epoch_pair: tuple[int, int],
    anchor_prev: Anchor,
    anchor_cur: Anchor,
    sigma: float,
    kernel: RobustKernel | None = None,
    allow_cross_system: bool = False,
) -> Factor:
    """Satellite-differenced TDCP: clock change eliminated."""
    prev_epoch, cur_epoch = epoch_pair
    if prev_epoch < 0 or prev_epoch >= cur_epoch:
        raise ValueError(f"bad epoch pair {epoch_pair}")
    if not (obs.flags.has_tdcp and ref.flags.has_tdcp):
        raise ValueError("both observations need a tdcp residual")
    if not (obs.wavelength > 0 and ref.wavelength > 0):
        raise ValueError("missing wavelength")
    _check_pair(obs, ref, allow_cross_system)
    dlos = obs.los_unit - ref.los_unit
    const = (obs.tdcp_residual - ref.tdcp_residual) - float(
        dlos @ (anchor_cur.position - anchor_prev.position)
    )
    return Factor(
        keys=(position_key(prev_epoch), position_key(cur_epoch)),
        jacobians=(-dlos[None, :], dlos[None, :]),
        constant=[const],
        sigma=[sigma],
        kernel=kernel,
    )


def dd_carrier_factor(
    obs: SatObservation,
    ref: SatObservation,
    epoch: int,
    ambiguity_slot: int,
    n_slots: int,
    sigma: float,
    kernel: RobustKernel | None = None,
) -> Factor:
    """Double-differenced carrier phase: couples position error with one
    float ambiguity slot (in cycles, scaled by the wavelength)."""
    if not obs.flags.has_ddcp:
        raise ValueError(f"{obs.sat_id}: missing dd carrier phase")
    if not obs.wavelength > 0:
        raise ValueError(f"{obs.sat_id}: missing wavelength")
    if not 0 <= ambiguity_slot < n_slots:
        raise ValueError(f"ambiguity slot {ambiguity_slot} out of range [0, {n_slots})")
    _check_pair(obs, ref, allow_cross_system=False)
    amb_row = np.zeros((1, n_slots))
    amb_row[0, ambiguity_slot] = obs.wavelength
    return Factor(
        keys=(position_key(epoch), ambiguity_key(n_slots)),
        jacobians=((obs.los_unit - ref.los_unit)[None, :], amb_row),
        constant=[obs.dd_carrier_residual],
        sigma=[sigma],
        kernel=kernel,
    )


def motion_factor(
    epoch_pair: tuple[int, int],
    dt: float,
    anchor_prev: Anchor,
    anchor_cur: Anchor,
    sigma,
) -> Factor:
    """Trapezoidal integration tie between positions and velocities."""
    prev_epoch, cur_epoch = epoch_pair
    if prev_epoch < 0 or prev_epoch >= cur_epoch:
        raise ValueError(f"bad epoch pair {epoch_pair}")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    eye = np.eye(3)
    const = 0.5 * dt * (anchor_prev.velocity + anchor_cur.velocity) - (
        anchor_cur.position - anchor_prev.position
    )
    return Factor(
        keys=(
            position_key(prev_epoch),
            position_key(cur_epoch),
            velocity_key(prev_epoch),
            velocity_key(cur_epoch),
        ),
        jacobians=(-eye, eye, -0.5 * dt * eye, -0.5 * dt * eye),
        constant=const,
        sigma=_sigma_vec(sigma, 3),
    )


def clock_factor(
    epoch_pair: tuple[int, int], dt: float, clock_dim: int, sigma
) -> Factor:
    """Ties the receiver-clock change to the average drift; inter-system
    bias components get pure constancy rows."""
    prev_epoch, cur_epoch = epoch_pair
    if prev_epoch < 0 or prev_epoch >= cur_epoch:
        raise ValueError(f"bad epoch pair {epoch_pair}")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    eye = np.eye(clock_dim)
    drift_col = np.zeros((clock_dim, 1))
    drift_col[0, 0] = -0.5 * dt
    return Factor(
        keys=(
            clock_key(prev_epoch, clock_dim),
            clock_key(cur_epoch, clock_dim),
            drift_key(prev_epoch),
            drift_key(cur_epoch),
        ),
        jacobians=(-eye, eye, drift_col, drift_col),
        constant=np.zeros(clock_dim),
        sigma=_sigma_vec(sigma, clock_dim),
    )


def clock_const_factor(epoch_pair: tuple[int, int], clock_dim: int, sigma) -> Factor:
    """Soft equality between successive clock vectors."""
    prev_epoch, cur_epoch = epoch_pair
    if prev_epoch < 0 or prev_epoch >= cur_epoch:
        raise ValueError(f"bad epoch pair {epoch_pair}")
    eye = np.eye(clock_dim)
    return Factor(
        keys=(clock_key(prev_epoch, clock_dim), clock_key(cur_epoch, clock_dim)),
        jacobians=(-eye, eye),
        constant=np.zeros(clock_dim),
        sigma=_sigma_vec(sigma, clock_dim),
    )


def ambiguity_prior_factor(fixed: np.ndarray, sigma: float = 1e-6) -> Factor:
    """Hard prior pinning the ambiguity vector to fixed integers."""
    fixed = np.atleast_1d(np.asarray(fixed, dtype=float))
    n = fixed.shape[0]
    return Factor(
        keys=(ambiguity_key(n),),
        jacobians=(np.eye(n),),
        constant=fixed,
        sigma=np.full(n, sigma),
    )
