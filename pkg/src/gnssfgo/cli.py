"""Command-line interface.

Subcommands: ``simulate`` (scenario -> epoch/truth files), ``solve``
(epochs + recipe -> solution/stats), ``example1`` (robust single-point
positioning), ``example2`` (ambiguity resolution, models 1/2),
``stats`` (estimates vs truth), and ``op`` (single-operation JSON
endpoint used by scripting wrappers).

``GNSSFGO_CONFIG_DIR`` names the default directory searched for bare
config names.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import epochfile, pipeline, scenario
from .ambiguity import (
    AmbiguityProblem,
    IntegerCandidates,
    decorrelate,
    fix_solution,
    ratio_test,
    search_integers,
)
from .graph import Factor, FactorGraph, Values, VariableKey, VariableKind
from .robust import RobustKernel, huber_weight
from .solver import SolverConfig, marginal_covariance, solve

CONFIG_DIR_ENV = "GNSSFGO_CONFIG_DIR"

_PRESETS = {
    "urban": scenario.urban_scenario,
    "rtk": scenario.rtk_scenario,
}


class CliError(ValueError):
    pass


def _resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    cfg_dir = os.environ.get(CONFIG_DIR_ENV)
    if cfg_dir:
        for cand in (Path(cfg_dir) / name, Path(cfg_dir) / f"{name}.json"):
            if cand.exists():
                return cand
    raise CliError(f"config {name!r} not found (searched cwd and ${CONFIG_DIR_ENV})")


def _load_scenario(args) -> scenario.ScenarioConfig:
    if getattr(args, "scenario", None):
        path = _resolve_config_path(args.scenario)
        cfg = scenario.scenario_from_dict(json.loads(path.read_text()))
        if args.seed is not None:
            cfg.seed = args.seed
        return cfg
    preset = getattr(args, "preset", None) or "urban"
    seed = args.seed if args.seed is not None else 0
    kwargs = {}
    if getattr(args, "epochs_count", None):
        kwargs["n_epochs"] = args.epochs_count
    return _PRESETS[preset](seed, **kwargs)


def _input_records(args):
    """Records, layout, truth from files or a generated scenario."""
    if getattr(args, "epochs", None):
        records, layout, _ = epochfile.load_epoch_file(args.epochs)
        truth = epochfile.load_truth_file(args.truth) if getattr(args, "truth", None) else None
        return records, layout, truth
    cfg = _load_scenario(args)
    records, truth = scenario.generate(cfg)
    return records, truth.layout, truth


def _write_outputs(args, records, positions, stats, extra_meta=None):
    meta = {"command": args.command}
    if extra_meta:
        meta.update(extra_meta)
    if getattr(args, "out_solution", None):
        epochfile.write_solution_file(
            args.out_solution,
            [r.epoch for r in records],
            positions,
            times=[r.time for r in records],
            meta=meta,
        )
    if stats is not None and getattr(args, "out_stats", None):
        Path(args.out_stats).write_text(
            json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    if stats is not None and getattr(args, "out_cdf", None):
        Path(args.out_cdf).write_text(pipeline.format_cdf_table(stats))


def _cmd_simulate(args) -> int:
    cfg = _load_scenario(args)
    records, truth = scenario.generate(cfg)
    epochfile.write_epoch_file(
        args.out, records, truth.layout, meta={"seed": cfg.seed, "n_epochs": cfg.n_epochs}
    )
    if args.truth_out:
        epochfile.write_truth_file(args.truth_out, truth, meta={"seed": cfg.seed})
    print(
        json.dumps(
            {"epochs": len(records), "satellites": len(cfg.constellation), "out": str(args.out)}
        )
    )
    return 0


def _cmd_solve(args) -> int:
    records, layout, truth = _input_records(args)
    recipe = json.loads(_resolve_config_path(args.recipe).read_text())
    result = pipeline.run_recipe(records, layout, recipe, truth=truth, mode=args.mode)
    _write_outputs(args, records, result.positions, result.stats)
    summary = {
        "converged": result.report.converged,
        "iterations": result.report.iterations,
        "final_cost": result.report.final_cost,
    }
    if result.stats is not None:
        summary["stats"] = result.stats.to_dict()
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_example1(args) -> int:
    records, layout, truth = _input_records(args)
    cfg = pipeline.Example1Config(
        robust=args.robust,
        huber_k=args.huber_k,
        snr_mask=args.snr_mask,
        el_mask_deg=args.el_mask,
        clock_sigma=args.clock_sigma,
        mode=args.mode,
    )
    result = pipeline.run_example1(records, layout, cfg, truth=truth)
    _write_outputs(args, result.records_used, result.positions, result.stats, {"robust": args.robust})
    summary = {
        "robust": args.robust,
        "masked_out": result.masked_out,
        "converged": result.report.converged,
        "iterations": result.report.iterations,
        "final_cost": result.report.final_cost,
    }
    if result.stats is not None:
        summary["stats"] = result.stats.to_dict()
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_example2(args) -> int:
    records, layout, truth = _input_records(args)
    cfg = pipeline.Example2Config(
        model=args.model,
        ratio_threshold=args.ratio_threshold,
        mode=args.mode,
    )
    result = pipeline.run_example2(records, layout, cfg, truth=truth)
    _write_outputs(args, records, result.positions, result.stats, {"model": args.model})
    summary = {
        "model": args.model,
        "n_ambiguities": result.slots.n_slots,
        "fixed_rate": result.fixed_rate,
        "batch_decision": result.batch_decision.value,
        "batch_ratio": (
            None
            if result.batch_candidates is None or result.batch_candidates.q_best == 0.0
            else result.batch_candidates.q_second / result.batch_candidates.q_best
        ),
        "ambiguity_cov_trace": result.cov_trace,
        "converged": result.float_report.converged,
    }
    if result.stats is not None:
        summary["stats"] = result.stats.to_dict()
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_stats(args) -> int:
    _, est = epochfile.load_positions(args.estimates)
    _, tru = epochfile.load_positions(args.truth)
    if est.shape != tru.shape:
        raise CliError(f"estimate/truth shape mismatch: {est.shape} vs {tru.shape}")
    stats = pipeline.compute_error_stats(est, tru, args.mode)
    if args.out:
        Path(args.out).write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.out_cdf:
        Path(args.out_cdf).write_text(pipeline.format_cdf_table(stats))
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Single-operation JSON endpoint (scripting wrapper backend)
# ---------------------------------------------------------------------------

_KIND_NAMES = {
    "position_error": VariableKind.POSITION_ERROR,
    "velocity_error": VariableKind.VELOCITY_ERROR,
    "clock": VariableKind.CLOCK,
    "clock_drift": VariableKind.CLOCK_DRIFT,
    "ambiguity": VariableKind.AMBIGUITY,
}
_KIND_STRINGS = {v: k for k, v in _KIND_NAMES.items()}


def _key_from_json(data: dict) -> VariableKey:
    return VariableKey(_KIND_NAMES[data["kind"]], int(data["epoch"]), int(data["dim"]))


def _key_to_json(key: VariableKey) -> dict:
    return {"kind": _KIND_STRINGS[key.kind], "epoch": key.epoch, "dim": key.dim}


def _kernel_from_json(data) -> RobustKernel | None:
    if not data:
        return None
    if data.get("kind") == "huber":
        return RobustKernel.huber(float(data.get("k", 1.345)))
    if data.get("kind") in ("none", None):
        return None
    raise CliError(f"unknown kernel {data!r}")


def _graph_from_json(data: list) -> FactorGraph:
    graph = FactorGraph()
    for fd in data:
        keys = tuple(_key_from_json(k) for k in fd["keys"])
        graph.add(
            Factor(
                keys=keys,
                jacobians=tuple(np.asarray(j, dtype=float) for j in fd["jacobians"]),
                constant=np.asarray(fd["constant"], dtype=float),
                sigma=np.asarray(fd["sigma"], dtype=float),
                kernel=_kernel_from_json(fd.get("kernel")),
            )
        )
    return graph


def _values_from_json(data: list) -> Values:
    vals = Values()
    for entry in data:
        vals.set(_key_from_json(entry["key"]), np.asarray(entry["value"], dtype=float))
    return vals


def _values_to_json(vals: Values) -> list:
    return [
        {"key": _key_to_json(k), "value": list(v)}
        for k, v in sorted(vals.items(), key=lambda kv: (int(kv[0].kind), kv[0].epoch))
    ]


def _report_to_json(report) -> dict:
    return {
        "values": _values_to_json(report.values),
        "iterations": report.iterations,
        "final_cost": report.final_cost,
        "converged": report.converged,
        "per_iteration_costs": list(report.per_iteration_costs),
    }


def _candidates_to_json(cand: IntegerCandidates) -> dict:
    return {
        "best": [int(v) for v in cand.best],
        "second": [int(v) for v in cand.second],
        "q_best": cand.q_best,
        "q_second": cand.q_second,
    }


def _solver_config_from_json(data) -> SolverConfig | None:
    if not data:
        return None
    return SolverConfig(
        max_iterations=int(data.get("max_iterations", 100)),
        lambda_init=float(data.get("lambda_init", 1e-4)),
        lambda_factor=float(data.get("lambda_factor", 10.0)),
        cost_tolerance=float(data.get("cost_tolerance", 1e-9)),
        step_tolerance=float(data.get("step_tolerance", 1e-10)),
    )


def _run_op(request: dict) -> dict:
    op = request.get("op")
    args = request.get("args", {})
    if op == "huber_weight":
        return {"result": huber_weight(float(args["r"]), float(args["k"]))}
    if op == "elevation_sigma":
        return {
            "result": scenario.elevation_sigma(
                float(args["elevation"]), float(args["a"]), float(args["b"])
            )
        }
    if op == "error_stats":
        stats = pipeline.compute_error_stats(
            np.asarray(args["estimates"], dtype=float),
            np.asarray(args["truth"], dtype=float),
            args.get("mode", "3d"),
        )
        return stats.to_dict()
    if op == "solve_graph":
        graph = _graph_from_json(args["factors"])
        init = _values_from_json(args["init"])
        report = solve(graph, init, _solver_config_from_json(args.get("config")))
        return _report_to_json(report)
    if op == "marginal_covariance":
        graph = _graph_from_json(args["factors"])
        vals = _values_from_json(args["values"])
        keys = [_key_from_json(k) for k in args["keys"]]
        cov = marginal_covariance(graph, vals, keys)
        return {"cov": [list(row) for row in cov]}
    if op == "decorrelate":
        problem = AmbiguityProblem(
            np.asarray(args["float_amb"], dtype=float), np.asarray(args["cov"], dtype=float)
        )
        zmat, transformed = decorrelate(problem)
        return {
            "z": [[int(v) for v in row] for row in zmat],
            "float_amb": list(transformed.float_amb),
            "cov": [list(row) for row in transformed.cov],
        }
    if op == "search_integers":
        problem = AmbiguityProblem(
            np.asarray(args["float_amb"], dtype=float), np.asarray(args["cov"], dtype=float)
        )
        return _candidates_to_json(search_integers(problem))
    if op == "ratio_test":
        cand = IntegerCandidates(
            best=np.asarray(args["best"], dtype=np.int64),
            second=np.asarray(args["second"], dtype=np.int64),
            q_best=float(args["q_best"]),
            q_second=float(args["q_second"]),
        )
        return {"decision": ratio_test(cand, float(args["threshold"])).value}
    if op == "fix_solution":
        graph = _graph_from_json(args["factors"])
        vals = _values_from_json(args["values"])
        report = fix_solution(
            graph,
            vals,
            np.asarray(args["fixed"], dtype=float),
            prior_sigma=float(args.get("prior_sigma", 1e-6)),
        )
        return _report_to_json(report)
    raise CliError(f"unknown op {op!r}")


def _cmd_op(args) -> int:
    if args.request == "-":
        payload = sys.stdin.read()
    else:
        payload = Path(args.request).read_text()
    request = json.loads(payload)
    result = _run_op(request)
    print(json.dumps(result, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", help="epoch file (instead of generating a scenario)")
    p.add_argument("--truth", help="ground-truth file matching --epochs")
    p.add_argument("--scenario", help="scenario config (path or name in $%s)" % CONFIG_DIR_ENV)
    p.add_argument("--preset", choices=sorted(_PRESETS), help="built-in scenario preset")
    p.add_argument("--seed", type=int, default=None, help="scenario seed")
    p.add_argument("--epochs-count", type=int, default=None, help="override scenario epoch count")


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-solution", help="write estimated positions here")
    p.add_argument("--out-stats", help="write error statistics (JSON) here")
    p.add_argument("--out-cdf", help="write the error CDF table here")
    p.add_argument("--mode", choices=("3d", "horizontal"), default="3d", help="error metric")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnssfgo", description="GNSS factor-graph optimization pipelines"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--scenario", help="scenario config (path or name in $%s)" % CONFIG_DIR_ENV)
    p.add_argument("--preset", choices=sorted(_PRESETS), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs-count", type=int, default=None)
    p.add_argument("--out", required=True, help="epoch file to write")
    p.add_argument("--truth-out", help="ground-truth file to write")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("solve", help="solve a declarative graph recipe")
    _add_input_args(p)
    p.add_argument("--recipe", required=True, help="graph recipe JSON")
    _add_output_args(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("example1", help="robust single-point positioning")
    _add_input_args(p)
    p.add_argument("--robust", choices=("huber", "none"), default="huber")
    p.add_argument("--huber-k", type=float, default=1.345)
    p.add_argument("--snr-mask", type=float, default=35.0, help="dB-Hz cutoff")
    p.add_argument("--el-mask", type=float, default=15.0, help="elevation cutoff, degrees")
    p.add_argument("--clock-sigma", type=float, default=0.1)
    _add_output_args(p)
    p.set_defaults(func=_cmd_example1)

    p = sub.add_parser("example2", help="carrier-phase ambiguity resolution")
    _add_input_args(p)
    p.add_argument("--model", type=int, choices=(1, 2), default=2)
    p.add_argument("--ratio-threshold", type=float, default=2.0)
    _add_output_args(p)
    p.set_defaults(func=_cmd_example2)

    p = sub.add_parser("stats", help="error statistics from estimate/truth files")
    p.add_argument("--estimates", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="stats JSON output")
    p.add_argument("--out-cdf", help="CDF table output")
    p.add_argument("--mode", choices=("3d", "horizontal"), default="3d")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("op", help="run one operation from a JSON request")
    p.add_argument("--request", default="-", help="request file, or - for stdin")
    p.set_defaults(func=_cmd_op)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
