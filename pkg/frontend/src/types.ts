/** State-block kinds understood by the engine. */
export type VariableKindName =
  | "position_error"
  | "velocity_error"
  | "clock"
  | "clock_drift"
  | "ambiguity";

/** Handle for one state block. */
export interface VariableKeyJson {
  kind: VariableKindName;
  epoch: number;
  dim: number;
}

/** Robust loss attached to a factor. */
export interface KernelJson {
  kind: "none" | "huber";
  k?: number;
}

/** One linear residual block: jacobians[i] is rows x keys[i].dim. */
export interface FactorJson {
  keys: VariableKeyJson[];
  jacobians: number[][][];
  constant: number[];
  sigma: number[];
  kernel?: KernelJson | null;
}

/** Key/value entry of a state assignment. */
export interface ValueEntryJson {
  key: VariableKeyJson;
  value: number[];
}

export interface SolverConfigJson {
  max_iterations?: number;
  lambda_init?: number;
  lambda_factor?: number;
  cost_tolerance?: number;
  step_tolerance?: number;
}

export interface SolveReport {
  values: ValueEntryJson[];
  iterations: number;
  final_cost: number;
  converged: boolean;
  per_iteration_costs: number[];
}

export interface ErrorStatsJson {
  rms: number;
  p50: number;
  p95: number;
  sdc_score: number;
  n: number;
}

export interface IntegerCandidatesJson {
  best: number[];
  second: number[];
  q_best: number;
  q_second: number;
}

export interface DecorrelationJson {
  z: number[][];
  float_amb: number[];
  cov: number[][];
}

/** Summary printed by the example1 subcommand. */
export interface Example1Summary {
  robust: string;
  masked_out: number;
  converged: boolean;
  iterations: number;
  final_cost: number;
  stats?: ErrorStatsJson;
}

/** Summary printed by the example2 subcommand. */
export interface Example2Summary {
  model: number;
  n_ambiguities: number;
  fixed_rate: number;
  batch_decision: "fixed" | "float";
  batch_ratio: number | null;
  ambiguity_cov_trace: number;
  converged: boolean;
  stats?: ErrorStatsJson;
}

export interface SolveSummary {
  converged: boolean;
  iterations: number;
  final_cost: number;
  stats?: ErrorStatsJson;
}

export interface SimulateSummary {
  epochs: number;
  satellites: number;
  out: string;
}

/** Common input selection: a prebuilt epoch file or a seeded scenario. */
export interface InputOptions {
  epochs?: string;
  truth?: string;
  scenario?: string;
  preset?: "urban" | "rtk";
  seed?: number;
  epochsCount?: number;
}

export interface OutputOptions {
  outSolution?: string;
  outStats?: string;
  outCdf?: string;
  mode?: "3d" | "horizontal";
}

export interface Example1Options extends InputOptions, OutputOptions {
  robust?: "huber" | "none";
  huberK?: number;
  snrMask?: number;
  elMaskDeg?: number;
  clockSigma?: number;
}

export interface Example2Options extends InputOptions, OutputOptions {
  model?: 1 | 2;
  ratioThreshold?: number;
}

export interface SimulateOptions {
  scenario?: string;
  preset?: "urban" | "rtk";
  seed?: number;
  epochsCount?: number;
  out: string;
  truthOut?: string;
}

export interface StatsOptions {
  estimates: string;
  truth: string;
  out?: string;
  outCdf?: string;
  mode?: "3d" | "horizontal";
}
