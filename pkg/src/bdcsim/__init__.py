"""Block-diagonal coded distributed matrix multiplication.

Storage designs, communication-load and delay evaluation, assignment
solvers, and a message-level shuffle simulator.
"""

from .design import (
    AssignmentMatrix,
    DesignFormatError,
    DesignValidationError,
    StorageDesign,
    Violation,
    enumerate_batch_labels,
    load_design,
    parse_storage_fraction,
    rows_of,
    save_design,
    validate_assignment,
)
from .evaluation import (
    EXHAUSTIVE_LIMIT,
    CacheUnderflowError,
    ExhaustiveMode,
    FinisherSet,
    GDistribution,
    LoadResult,
    PerformanceReport,
    SampledMode,
    UnicastCache,
    UnicastTally,
    completion_count,
    decodable,
    evaluate,
    g_distribution,
    load_bdc,
    per_finisher_loads,
    remaining_unicasts,
)
from .model import (
    BatchSizeError,
    DelayParameters,
    NonIntegerQError,
    NonIntegerStorageError,
    ParameterError,
    PartitionDivisionError,
    StorageRangeError,
    SystemParameters,
    VectorCountError,
    alpha,
    binomial,
    harmonic,
    load_mds,
    map_delay,
    min_multicast_size,
    multicast_load,
    order_statistic_mean,
    overall_delay,
    reduce_delay,
    scaled_parameters,
    sigma_map,
    sigma_reduce,
    strategy_thresholds,
    validate_parameters,
)
from .shuffle import (
    CrossValidationReport,
    MulticastMessage,
    ShuffleTrace,
    best_strategy_trace,
    cross_validate,
    multicast_slack_bound,
    simulate_shuffle,
)
from .solvers import (
    InfeasibleStartError,
    SolverConfig,
    SolverResult,
    branch_and_bound_assign,
    default_threshold,
    exhaustive_assign,
    heuristic_assign,
    hybrid_assign,
    random_assign,
    solve,
)

__version__ = "0.1.0"
