"""Factor-graph optimization engine for GNSS state estimation."""

from .ambiguity import (
    AmbiguityProblem,
    FixDecision,
    IntegerCandidates,
    decorrelate,
    fix_solution,
    ratio_test,
    search_integers,
)
from .factors import (
    EpochRecord,
    ObsFlags,
    SatObservation,
    SatSystem,
    SystemBiasLayout,
    clock_const_factor,
    clock_factor,
    dd_carrier_factor,
    doppler_tdpos_factor,
    doppler_velocity_factor,
    doppler_velocity_sd_factor,
    motion_factor,
    pseudorange_factor,
    pseudorange_sd_factor,
    tdcp_factor,
    tdcp_sd_factor,
)
from .graph import (
    Anchor,
    Factor,
    FactorGraph,
    Values,
    VariableKey,
    VariableKind,
    ambiguity_key,
    build_ordering,
    clock_key,
    drift_key,
    evaluate_error,
    linearize,
    position_key,
    total_weighted_cost,
    velocity_key,
)
from .pipeline import (
    ErrorStats,
    Example1Config,
    Example2Config,
    build_example1_graph,
    build_example2_graph,
    compute_error_stats,
    run_example1,
    run_example2,
)
from .robust import RobustKernel, huber_weight
from .scenario import (
    GroundTruth,
    ScenarioConfig,
    apply_masks,
    elevation_sigma,
    generate,
    rtk_scenario,
    urban_scenario,
)
from .solver import (
    SingularityError,
    SolutionReport,
    SolverConfig,
    marginal_covariance,
    solve,
)

__version__ = "0.1.0"
