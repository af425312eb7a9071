/**
 * Thin wrapper around the gnssfgo command-line interface.
 *
 * Every method shells out to the CLI and parses its JSON output; no
 * numeric logic lives on this side, so results are bit-identical to
 * direct CLI runs. The executable is resolved from the GNSSFGO_CLI
 * environment variable (default: "gnssfgo" on PATH); set it to e.g.
 * "python3 -m gnssfgo.cli" to run from a source checkout.
 */

import { execFileSync } from "node:child_process";

import type {
  DecorrelationJson,
  ErrorStatsJson,
  Example1Options,
  Example1Summary,
  Example2Options,
  Example2Summary,
  FactorJson,
  InputOptions,
  IntegerCandidatesJson,
  OutputOptions,
  SimulateOptions,
  SimulateSummary,
  SolveReport,
  SolverConfigJson,
  SolveSummary,
  StatsOptions,
  ValueEntryJson,
  VariableKeyJson,
} from "./types.js";

export * from "./types.js";

export class CliError extends Error {
  constructor(message: string, readonly exitCode: number | null, readonly stderr: string) {
    super(message);
    this.name = "CliError";
  }
}

export interface CliOptions {
  /** Command line used to invoke the engine, e.g. ["gnssfgo"] or
   * ["python3", "-m", "gnssfgo.cli"]. */
  command?: string[];
  /** Working directory for CLI invocations. */
  cwd?: string;
}

function defaultCommand(): string[] {
  const env = process.env.GNSSFGO_CLI;
  if (env && env.trim().length > 0) {
    return env.trim().split(/\s+/);
  }
  return ["gnssfgo"];
}

function pushInputFlags(args: string[], opts: InputOptions): void {
  if (opts.epochs !== undefined) args.push("--epochs", opts.epochs);
  if (opts.truth !== undefined) args.push("--truth", opts.truth);
  if (opts.scenario !== undefined) args.push("--scenario", opts.scenario);
  if (opts.preset !== undefined) args.push("--preset", opts.preset);
  if (opts.seed !== undefined) args.push("--seed", String(opts.seed));
  if (opts.epochsCount !== undefined) args.push("--epochs-count", String(opts.epochsCount));
}

function pushOutputFlags(args: string[], opts: OutputOptions): void {
  if (opts.outSolution !== undefined) args.push("--out-solution", opts.outSolution);
  if (opts.outStats !== undefined) args.push("--out-stats", opts.outStats);
  if (opts.outCdf !== undefined) args.push("--out-cdf", opts.outCdf);
  if (opts.mode !== undefined) args.push("--mode", opts.mode);
}

export class GnssFgo {
  private readonly command: string[];
  private readonly cwd?: string;

  constructor(options: CliOptions = {}) {
    this.command = options.command ?? defaultCommand();
    this.cwd = options.cwd;
  }

  /** Raw CLI invocation; returns stdout. */
  run(args: string[], stdin?: string): string {
    const [exe, ...prefix] = this.command;
    try {
      return execFileSync(exe, [...prefix, ...args], {
        input: stdin,
        encoding: "utf-8",
        cwd: this.cwd,
        maxBuffer: 256 * 1024 * 1024,
      });
    } catch (err) {
      const e = err as NodeJS.ErrnoException & { status?: number; stderr?: Buffer | string };
      const stderr = e.stderr ? e.stderr.toString() : "";
      throw new CliError(
        `gnssfgo ${args[0] ?? ""} failed: ${stderr.trim() || e.message}`,
        e.status ?? null,
        stderr,
      );
    }
  }

  private runJson<T>(args: string[], stdin?: string): T {
    return JSON.parse(this.run(args, stdin)) as T;
  }

  /** Generate a synthetic scenario into epoch (and truth) files. */
  simulate(opts: SimulateOptions): SimulateSummary {
    const args = ["simulate", "--out", opts.out];
    if (opts.scenario !== undefined) args.push("--scenario", opts.scenario);
    if (opts.preset !== undefined) args.push("--preset", opts.preset);
    if (opts.seed !== undefined) args.push("--seed", String(opts.seed));
    if (opts.epochsCount !== undefined) args.push("--epochs-count", String(opts.epochsCount));
    if (opts.truthOut !== undefined) args.push("--truth-out", opts.truthOut);
    return this.runJson(args);
  }

  /** Robust single-point positioning pipeline. */
  example1(opts: Example1Options = {}): Example1Summary {
    const args = ["example1"];
    pushInputFlags(args, opts);
    if (opts.robust !== undefined) args.push("--robust", opts.robust);
    if (opts.huberK !== undefined) args.push("--huber-k", String(opts.huberK));
    if (opts.snrMask !== undefined) args.push("--snr-mask", String(opts.snrMask));
    if (opts.elMaskDeg !== undefined) args.push("--el-mask", String(opts.elMaskDeg));
    if (opts.clockSigma !== undefined) args.push("--clock-sigma", String(opts.clockSigma));
    pushOutputFlags(args, opts);
    return this.runJson(args);
  }

  /** Carrier-phase ambiguity resolution pipeline. */
  example2(opts: Example2Options = {}): Example2Summary {
    const args = ["example2"];
    pushInputFlags(args, opts);
    if (opts.model !== undefined) args.push("--model", String(opts.model));
    if (opts.ratioThreshold !== undefined) args.push("--ratio-threshold", String(opts.ratioThreshold));
    pushOutputFlags(args, opts);
    return this.runJson(args);
  }

  /** Solve a declarative graph recipe against an epoch file. */
  solveRecipe(recipePath: string, opts: InputOptions & OutputOptions = {}): SolveSummary {
    const args = ["solve", "--recipe", recipePath];
    pushInputFlags(args, opts);
    pushOutputFlags(args, opts);
    return this.runJson(args);
  }

  /** Error statistics between an estimate file and a truth file. */
  stats(opts: StatsOptions): ErrorStatsJson {
    const args = ["stats", "--estimates", opts.estimates, "--truth", opts.truth];
    if (opts.out !== undefined) args.push("--out", opts.out);
    if (opts.outCdf !== undefined) args.push("--out-cdf", opts.outCdf);
    if (opts.mode !== undefined) args.push("--mode", opts.mode);
    return this.runJson(args);
  }

  /** Single-operation JSON endpoint. */
  op<T>(name: string, args: Record<string, unknown>): T {
    return this.runJson<T>(["op", "--request", "-"], JSON.stringify({ op: name, args }));
  }

  // Convenience bindings over the op endpoint -----------------------------

  huberWeight(r: number, k: number): number {
    return this.op<{ result: number }>("huber_weight", { r, k }).result;
  }

  elevationSigma(elevation: number, a: number, b: number): number {
    return this.op<{ result: number }>("elevation_sigma", { elevation, a, b }).result;
  }

  errorStats(
    estimates: number[][],
    truth: number[][],
    mode: "3d" | "horizontal" = "3d",
  ): ErrorStatsJson {
    return this.op("error_stats", { estimates, truth, mode });
  }

  solveGraph(
    factors: FactorJson[],
    init: ValueEntryJson[],
    config?: SolverConfigJson,
  ): SolveReport {
    return this.op("solve_graph", { factors, init, config });
  }

  marginalCovariance(
    factors: FactorJson[],
    values: ValueEntryJson[],
    keys: VariableKeyJson[],
  ): number[][] {
    return this.op<{ cov: number[][] }>("marginal_covariance", { factors, values, keys }).cov;
  }

  decorrelate(floatAmb: number[], cov: number[][]): DecorrelationJson {
    return this.op("decorrelate", { float_amb: floatAmb, cov });
  }

  searchIntegers(floatAmb: number[], cov: number[][]): IntegerCandidatesJson {
    return this.op("search_integers", { float_amb: floatAmb, cov });
  }

  ratioTest(candidates: IntegerCandidatesJson, threshold: number): "fixed" | "float" {
    return this.op<{ decision: "fixed" | "float" }>("ratio_test", {
      best: candidates.best,
      second: candidates.second,
      q_best: candidates.q_best,
      q_second: candidates.q_second,
      threshold,
    }).decision;
  }

  fixSolution(
    factors: FactorJson[],
    values: ValueEntryJson[],
    fixed: number[],
    priorSigma?: number,
  ): SolveReport {
    return this.op("fix_solution", {
      factors,
      values,
      fixed,
      prior_sigma: priorSigma ?? 1e-6,
    });
  }
}

export default GnssFgo;
