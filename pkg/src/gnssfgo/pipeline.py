"""Graph assembly for the example pipelines, recipes, and error metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import factors as fmod
from .ambiguity import (
    MAX_SEARCH_DIM,
    AmbiguityProblem,
    FixDecision,
    IntegerCandidates,
    fix_solution,
    ratio_test,
    search_integers,
)
from .factors import EpochRecord, SatObservation, SystemBiasLayout
from .graph import FactorGraph, Values, ambiguity_key, position_key
from .robust import DEFAULT_HUBER_K, RobustKernel
from .scenario import GroundTruth, apply_masks, elevation_sigma
from .solver import SolutionReport, SolverConfig, marginal_covariance, solve

logger = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Error statistics
# ---------------------------------------------------------------------------

@dataclass
class ErrorStats:
    rms: float
    p50: float
    p95: float
    sdc_score: float
    cdf: np.ndarray

    def to_dict(self) -> dict:
        return {
            "rms": self.rms,
            "p50": self.p50,
            "p95": self.p95,
            "sdc_score": self.sdc_score,
            "n": int(self.cdf.shape[0]),
        }


def compute_error_stats(estimates: np.ndarray, truth: np.ndarray, mode: str = "3d") -> ErrorStats:
    """Positioning error statistics; percentiles use linear interpolation
    between closest ranks and sdc_score = (p50 + p95) / 2."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape or estimates.ndim != 2:
        raise ValueError(f"shape mismatch: {estimates.shape} vs {truth.shape}")
    if estimates.shape[0] == 0:
        raise ValueError("empty input")
    diff = estimates - truth
    if mode == "3d":
        err = np.linalg.norm(diff, axis=1)
    elif mode == "horizontal":
        err = np.linalg.norm(diff[:, :2], axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    p50, p95 = np.percentile(err, [50.0, 95.0])
    return ErrorStats(
        rms=float(np.sqrt(np.mean(err**2))),
        p50=float(p50),
        p95=float(p95),
        sdc_score=float(0.5 * (p50 + p95)),
        cdf=np.sort(err),
    )


def sdc_score(p50: float, p95: float) -> float:
    return 0.5 * (p50 + p95)


def format_cdf_table(stats: ErrorStats) -> str:
    """Two-column text table (error, cumulative fraction) for plotting."""
    n = stats.cdf.shape[0]
    lines = ["# error_m cumulative_fraction"]
    for i, e in enumerate(stats.cdf):
        lines.append(f"{e!r} {(i + 1) / n!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def zero_values(graph: FactorGraph) -> Values:
    vals = Values()
    for key in graph.keys():
        vals.set(key, np.zeros(key.dim))
    return vals


def absolute_positions(records: list[EpochRecord], values: Values) -> np.ndarray:
    """Anchor plus estimated position error; anchor alone when the epoch
    carries no position state."""
    out = np.zeros((len(records), 3))
    for i, rec in enumerate(records):
        key = position_key(rec.epoch)
        out[i] = rec.anchor_position
        if key in values:
            out[i] = out[i] + values.get(key)
    return out


def _pair_sigma(obs: SatObservation, ref: SatObservation, a: float, b: float) -> float:
    sa = elevation_sigma(obs.elevation, a, b)
    sb = elevation_sigma(ref.elevation, a, b)
    return math.sqrt(sa * sa + sb * sb)


def _reference_obs(record: EpochRecord, system) -> SatObservation | None:
    ref_id = record.reference_sat.get(system)
    if ref_id is None:
        return None
    try:
        return record.sat(ref_id)
    except KeyError:
        return None


# ---------------------------------------------------------------------------
# Ambiguity bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class AmbiguityArc:
    sat_id: str
    start_epoch: int
    end_epoch: int
    slot: int


@dataclass
class AmbiguitySlots:
    """One slot per slip-free double-difference arc, shared across epochs."""

    arcs: list[AmbiguityArc] = field(default_factory=list)
    _slot_at: dict[tuple[int, str], int] = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return len(self.arcs)

    def slot_of(self, epoch: int, sat_id: str) -> int:
        return self._slot_at[(epoch, sat_id)]

    def slots_at(self, epoch: int) -> list[int]:
        return sorted(s for (e, _), s in self._slot_at.items() if e == epoch)


def build_ambiguity_slots(records: list[EpochRecord]) -> AmbiguitySlots:
    """Assign ambiguity slots; an arc breaks at a cycle slip or a gap in
    double-difference availability."""
    slots = AmbiguitySlots()
    open_arc: dict[str, AmbiguityArc] = {}
    prev_epoch: int | None = None
    for rec in records:
        active_now = set()
        for obs in rec.sats:
            if not obs.flags.has_ddcp:
                continue
            active_now.add(obs.sat_id)
            arc = open_arc.get(obs.sat_id)
            contiguous = arc is not None and prev_epoch is not None and arc.end_epoch == prev_epoch
            if not contiguous or obs.flags.cycle_slip:
                arc = AmbiguityArc(obs.sat_id, rec.epoch, rec.epoch, slot=len(slots.arcs))
                slots.arcs.append(arc)
                open_arc[obs.sat_id] = arc
            else:
                arc.end_epoch = rec.epoch
            slots._slot_at[(rec.epoch, obs.sat_id)] = arc.slot
        prev_epoch = rec.epoch
    return slots


# ---------------------------------------------------------------------------
# Example 1: robust single-point positioning
# ---------------------------------------------------------------------------

@dataclass
class Example1Config:
    robust: str = "huber"  # "huber" | "none"
    huber_k: float = DEFAULT_HUBER_K
    snr_mask: float = 35.0
    el_mask_deg: float = 15.0
    clock_sigma: float = 0.1
    sigma_a: float = 0.3
    sigma_b: float = 0.3
    mode: str = "3d"

    def kernel(self) -> RobustKernel | None:
        if self.robust == "huber":
            return RobustKernel.huber(self.huber_k)
        if self.robust == "none":
            return None
        raise PipelineError(f"unknown robust model {self.robust!r}")


def build_example1_graph(
    records: list[EpochRecord],
    layout: SystemBiasLayout,
    kernel: RobustKernel | None,
    clock_sigma: float,
    sigma_a: float = 0.3,
    sigma_b: float = 0.3,
) -> FactorGraph:
    """Pseudorange factors per observation plus clock-constancy ties."""
    if not records:
        raise PipelineError("no epochs")
    graph = FactorGraph()
    for rec in records:
        graph.set_anchor(rec.epoch, rec.anchor_position, rec.anchor_velocity)
        usable = 0
        for obs in rec.sats:
            if not obs.flags.has_psr:
                continue
            sigma = elevation_sigma(obs.elevation, sigma_a, sigma_b)
            graph.add(fmod.pseudorange_factor(obs, rec.epoch, layout, sigma, kernel=kernel))
            usable += 1
        if usable < 4:
            logger.warning(
                "epoch %d: only %d usable pseudoranges; relying on clock ties", rec.epoch, usable
            )
    for prev, cur in zip(records[:-1], records[1:]):
        graph.add(
            fmod.clock_const_factor((prev.epoch, cur.epoch), layout.clock_dim, clock_sigma)
        )
    return graph


@dataclass
class Example1Result:
    positions: np.ndarray
    report: SolutionReport
    stats: ErrorStats | None
    masked_out: int
    records_used: list[EpochRecord]


def run_example1(
    records: list[EpochRecord],
    layout: SystemBiasLayout,
    config: Example1Config | None = None,
    truth: GroundTruth | None = None,
    solver_config: SolverConfig | None = None,
) -> Example1Result:
    cfg = config or Example1Config()
    el_min = math.radians(cfg.el_mask_deg)
    masked = [apply_masks(r, cfg.snr_mask, el_min) for r in records]
    removed = sum(len(a.sats) - len(b.sats) for a, b in zip(records, masked))
    graph = build_example1_graph(
        masked, layout, cfg.kernel(), cfg.clock_sigma, cfg.sigma_a, cfg.sigma_b
    )
    report = solve(graph, zero_values(graph), solver_config)
    positions = absolute_positions(masked, report.values)
    stats = None
    if truth is not None:
        stats = compute_error_stats(positions, truth.positions, cfg.mode)
    return Example1Result(positions, report, stats, removed, masked)


# ---------------------------------------------------------------------------
# Example 2: ambiguity resolution with two observation models
# ---------------------------------------------------------------------------

@dataclass
class Example2Config:
    model: int = 2
    ratio_threshold: float = 2.0
    sigma_a: float = 0.3
    sigma_b: float = 0.3
    dd_sigma: float = 0.005
    dopp_sd_sigma: float = 0.03
    motion_sigma: float = 0.02
    fix_prior_sigma: float = 1e-6
    mode: str = "horizontal"


def build_example2_graph(
    records: list[EpochRecord],
    layout: SystemBiasLayout,
    model: int,
    config: Example2Config | None = None,
) -> tuple[FactorGraph, AmbiguitySlots]:
    """Model 1: satellite-differenced pseudorange + DD carrier factors.
    Model 2 adds satellite-differenced Doppler and motion ties."""
    cfg = config or Example2Config()
    if model not in (1, 2):
        raise PipelineError(f"model must be 1 or 2, got {model}")
    if not records:
        raise PipelineError("no epochs")
    slots = build_ambiguity_slots(records)
    graph = FactorGraph()
    n_sd = 0
    for rec in records:
        graph.set_anchor(rec.epoch, rec.anchor_position, rec.anchor_velocity)
        for obs in rec.sats:
            ref = _reference_obs(rec, obs.system)
            if ref is None or ref.sat_id == obs.sat_id:
                continue
            if obs.flags.has_psr and ref.flags.has_psr:
                graph.add(
                    fmod.pseudorange_sd_factor(
                        obs, ref, rec.epoch, _pair_sigma(obs, ref, cfg.sigma_a, cfg.sigma_b)
                    )
                )
                n_sd += 1
            if obs.flags.has_ddcp:
                graph.add(
                    fmod.dd_carrier_factor(
                        obs,
                        ref,
                        rec.epoch,
                        slots.slot_of(rec.epoch, obs.sat_id),
                        slots.n_slots,
                        cfg.dd_sigma,
                    )
                )
            if model == 2 and obs.flags.has_dopp and ref.flags.has_dopp:
                graph.add(
                    fmod.doppler_velocity_sd_factor(
                        obs, ref, rec.epoch, rec.anchor_velocity, cfg.dopp_sd_sigma
                    )
                )
    if n_sd == 0:
        raise PipelineError("no reference satellite visible; cannot form differences")
    if model == 2:
        for prev, cur in zip(records[:-1], records[1:]):
            graph.add(
                fmod.motion_factor(
                    (prev.epoch, cur.epoch),
                    cur.dt_prev,
                    prev.anchor,
                    cur.anchor,
                    cfg.motion_sigma,
                )
            )
    return graph, slots


@dataclass
class EpochFixInfo:
    epoch: int
    n_active: int
    ratio: float
    fixed: bool


@dataclass
class Example2Result:
    positions: np.ndarray
    float_report: SolutionReport
    float_ambiguity: np.ndarray
    ambiguity_cov: np.ndarray
    slots: AmbiguitySlots
    epoch_fixes: list[EpochFixInfo]
    fixed_rate: float
    batch_candidates: IntegerCandidates | None
    batch_decision: FixDecision
    fixed_report: SolutionReport | None
    stats: ErrorStats | None

    @property
    def cov_trace(self) -> float:
        return float(np.trace(self.ambiguity_cov))


def run_example2(
    records: list[EpochRecord],
    layout: SystemBiasLayout,
    config: Example2Config | None = None,
    truth: GroundTruth | None = None,
    solver_config: SolverConfig | None = None,
) -> Example2Result:
    cfg = config or Example2Config()
    graph, slots = build_example2_graph(records, layout, cfg.model, cfg)
    if slots.n_slots == 0:
        raise PipelineError("no double-difference observations; nothing to resolve")
    float_report = solve(graph, zero_values(graph), solver_config)
    amb_key = ambiguity_key(slots.n_slots)
    float_amb = float_report.values.get(amb_key).copy()
    cov = marginal_covariance(graph, float_report.values, [amb_key])

    epoch_fixes: list[EpochFixInfo] = []
    for rec in records:
        active = slots.slots_at(rec.epoch)
        if not active:
            continue
        idx = np.asarray(active, dtype=int)
        sub = AmbiguityProblem(float_amb[idx], cov[np.ix_(idx, idx)])
        cand = search_integers(sub)
        ratio = math.inf if cand.q_best == 0.0 else cand.q_second / cand.q_best
        fixed = ratio_test(cand, cfg.ratio_threshold) is FixDecision.FIXED
        epoch_fixes.append(EpochFixInfo(rec.epoch, len(active), ratio, fixed))
    fixed_rate = (
        sum(1 for e in epoch_fixes if e.fixed) / len(epoch_fixes) if epoch_fixes else 0.0
    )

    batch_candidates = None
    batch_decision = FixDecision.FLOAT
    if slots.n_slots <= MAX_SEARCH_DIM:
        batch_candidates = search_integers(AmbiguityProblem(float_amb, cov))
        batch_decision = ratio_test(batch_candidates, cfg.ratio_threshold)
    fixed_report = None
    final_values = float_report.values
    if batch_decision is FixDecision.FIXED:
        fixed_report = fix_solution(
            graph, float_report.values, batch_candidates.best, cfg.fix_prior_sigma, solver_config
        )
        final_values = fixed_report.values

    positions = absolute_positions(records, final_values)
    stats = None
    if truth is not None:
        stats = compute_error_stats(positions, truth.positions, cfg.mode)
    return Example2Result(
        positions=positions,
        float_report=float_report,
        float_ambiguity=float_amb,
        ambiguity_cov=cov,
        slots=slots,
        epoch_fixes=epoch_fixes,
        fixed_rate=fixed_rate,
        batch_candidates=batch_candidates,
        batch_decision=batch_decision,
        fixed_report=fixed_report,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# Declarative graph recipes
# ---------------------------------------------------------------------------

_RECIPE_TYPES = (
    "pseudorange",
    "pseudorange_sd",
    "doppler_velocity",
    "doppler_velocity_sd",
    "doppler_tdpos",
    "tdcp",
    "tdcp_sd",
    "dd_carrier",
    "motion",
    "clock",
    "clock_const",
)


def _recipe_kernel(spec: dict | None) -> RobustKernel | None:
    if not spec:
        return None
    kind = spec.get("kind", "none")
    if kind == "none":
        return None
    if kind == "huber":
        return RobustKernel.huber(float(spec.get("k", DEFAULT_HUBER_K)))
    raise PipelineError(f"unknown kernel kind {kind!r}")


def _recipe_sigma(spec, obs: SatObservation, ref: SatObservation | None = None) -> float:
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict) and "elevation" in spec:
        params = spec["elevation"]
        a = float(params.get("a", 0.3))
        b = float(params.get("b", 0.3))
        if ref is None:
            return elevation_sigma(obs.elevation, a, b)
        return _pair_sigma(obs, ref, a, b)
    raise PipelineError(f"bad sigma spec {spec!r}")


def _scalar_sigma(spec) -> float:
    if isinstance(spec, (int, float)):
        return float(spec)
    raise PipelineError(f"this factor type needs a numeric sigma, got {spec!r}")


def build_recipe_graph(
    records: list[EpochRecord], layout: SystemBiasLayout, recipe: dict
) -> tuple[FactorGraph, AmbiguitySlots | None]:
    """Assemble a graph from a declarative factor-family list.

    The recipe is a dict with a "factors" list; each entry names a type,
    a sigma (number or elevation model), and optionally a kernel.
    """
    families = recipe.get("factors")
    if not families:
        raise PipelineError("recipe has no factors")
    for fam in families:
        if fam.get("type") not in _RECIPE_TYPES:
            raise PipelineError(
                f"unknown factor type {fam.get('type')!r}; expected one of {_RECIPE_TYPES}"
            )
    graph = FactorGraph()
    slots: AmbiguitySlots | None = None
    if any(f["type"] == "dd_carrier" for f in families):
        slots = build_ambiguity_slots(records)

    for rec in records:
        graph.set_anchor(rec.epoch, rec.anchor_position, rec.anchor_velocity)

    for fam in families:
        ftype = fam["type"]
        kernel = _recipe_kernel(fam.get("kernel"))
        sigma_spec = fam.get("sigma", 1.0)
        if ftype == "pseudorange":
            for rec in records:
                for obs in rec.sats:
                    if obs.flags.has_psr:
                        graph.add(
                            fmod.pseudorange_factor(
                                obs, rec.epoch, layout, _recipe_sigma(sigma_spec, obs), kernel
                            )
                        )
        elif ftype == "pseudorange_sd":
            for rec in records:
                for obs in rec.sats:
                    ref = _reference_obs(rec, obs.system)
                    if ref is None or ref.sat_id == obs.sat_id:
                        continue
                    if obs.flags.has_psr and ref.flags.has_psr:
                        graph.add(
                            fmod.pseudorange_sd_factor(
                                obs, ref, rec.epoch, _recipe_sigma(sigma_spec, obs, ref), kernel
                            )
                        )
        elif ftype == "doppler_velocity":
            for rec in records:
                for obs in rec.sats:
                    if obs.flags.has_dopp:
                        graph.add(
                            fmod.doppler_velocity_factor(
                                obs,
                                rec.epoch,
                                rec.anchor_velocity,
                                _recipe_sigma(sigma_spec, obs),
                                kernel,
                            )
                        )
        elif ftype == "doppler_velocity_sd":
            for rec in records:
                for obs in rec.sats:
                    ref = _reference_obs(rec, obs.system)
                    if ref is None or ref.sat_id == obs.sat_id:
                        continue
                    if obs.flags.has_dopp and ref.flags.has_dopp:
                        graph.add(
                            fmod.doppler_velocity_sd_factor(
                                obs,
                                ref,
                                rec.epoch,
                                rec.anchor_velocity,
                                _recipe_sigma(sigma_spec, obs, ref),
                                kernel,
                            )
                        )
        elif ftype == "doppler_tdpos":
            with_clock = bool(fam.get("with_clock", False))
            for prev, cur in zip(records[:-1], records[1:]):
                for obs in cur.sats:
                    try:
                        obs_prev = prev.sat(obs.sat_id)
                    except KeyError:
                        continue
                    if obs.flags.has_dopp and obs_prev.flags.has_dopp:
                        graph.add(
                            fmod.doppler_tdpos_factor(
                                obs_prev,
                                obs,
                                (prev.epoch, cur.epoch),
                                cur.dt_prev,
                                prev.anchor,
                                cur.anchor,
                                _recipe_sigma(sigma_spec, obs),
                                layout=layout if with_clock else None,
                                kernel=kernel,
                            )
                        )
        elif ftype == "tdcp":
            skip_slips = bool(fam.get("skip_slips", True))
            for prev, cur in zip(records[:-1], records[1:]):
                for obs in cur.sats:
                    if not obs.flags.has_tdcp:
                        continue
                    if skip_slips and obs.flags.cycle_slip:
                        continue
                    graph.add(
                        fmod.tdcp_factor(
                            obs,
                            (prev.epoch, cur.epoch),
                            prev.anchor,
                            cur.anchor,
                            layout,
                            _recipe_sigma(sigma_spec, obs),
                            kernel,
                        )
                    )
        elif ftype == "tdcp_sd":
            skip_slips = bool(fam.get("skip_slips", True))
            for prev, cur in zip(records[:-1], records[1:]):
                for obs in cur.sats:
                    ref = _reference_obs(cur, obs.system)
                    if ref is None or ref.sat_id == obs.sat_id:
                        continue
                    if not (obs.flags.has_tdcp and ref.flags.has_tdcp):
                        continue
                    if skip_slips and (obs.flags.cycle_slip or ref.flags.cycle_slip):
                        continue
                    graph.add(
                        fmod.tdcp_sd_factor(
                            obs,
                            ref,
                            (prev.epoch, cur.epoch),
                            prev.anchor,
                            cur.anchor,
                            _recipe_sigma(sigma_spec, obs, ref),
                            kernel,
                        )
                    )
        elif ftype == "dd_carrier":
            assert slots is not None
            for rec in records:
                for obs in rec.sats:
                    ref = _reference_obs(rec, obs.system)
                    if ref is None or ref.sat_id == obs.sat_id or not obs.flags.has_ddcp:
                        continue
                    graph.add(
                        fmod.dd_carrier_factor(
                            obs,
                            ref,
                            rec.epoch,
                            slots.slot_of(rec.epoch, obs.sat_id),
                            slots.n_slots,
                            _recipe_sigma(sigma_spec, obs, ref),
                            kernel,
                        )
                    )
        elif ftype == "motion":
            for prev, cur in zip(records[:-1], records[1:]):
                graph.add(
                    fmod.motion_factor(
                        (prev.epoch, cur.epoch),
                        cur.dt_prev,
                        prev.anchor,
                        cur.anchor,
                        _scalar_sigma(sigma_spec),
                    )
                )
        elif ftype == "clock":
            for prev, cur in zip(records[:-1], records[1:]):
                graph.add(
                    fmod.clock_factor(
                        (prev.epoch, cur.epoch), cur.dt_prev, layout.clock_dim, _scalar_sigma(sigma_spec)
                    )
                )
        elif ftype == "clock_const":
            for prev, cur in zip(records[:-1], records[1:]):
                graph.add(
                    fmod.clock_const_factor(
                        (prev.epoch, cur.epoch), layout.clock_dim, _scalar_sigma(sigma_spec)
                    )
                )
    return graph, slots


@dataclass
class RecipeResult:
    positions: np.ndarray
    report: SolutionReport
    stats: ErrorStats | None


def run_recipe(
    records: list[EpochRecord],
    layout: SystemBiasLayout,
    recipe: dict,
    truth: GroundTruth | None = None,
    mode: str = "3d",
    solver_config: SolverConfig | None = None,
) -> RecipeResult:
    graph, _ = build_recipe_graph(records, layout, recipe)
    report = solve(graph, zero_values(graph), solver_config)
    positions = absolute_positions(records, report.values)
    stats = None
    if truth is not None:
        stats = compute_error_stats(positions, truth.positions, mode)
    return RecipeResult(positions, report, stats)
