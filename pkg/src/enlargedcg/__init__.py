"""Enlarged conjugate gradient on a simulated multi-node cluster.

The package splits into matrix/block kernels (:mod:`kernels`), row
partitioning and communication analysis (:mod:`partition`), the four
point-to-point communication schemes (:mod:`schemes`), the deterministic
virtual cluster executor (:mod:`cluster`), performance models
(:mod:`models`), the CG/ECG solvers (:mod:`solvers`), problem generators
and Matrix Market I/O (:mod:`problems`), and the benchmark front end
(:mod:`cli`).
"""

from .kernels import (
    BlockVector,
    BreakdownError,
    CsrMatrix,
    cholesky,
    gram_product,
    tri_solve_multi_rhs,
)
from .partition import (
    CommPattern,
    PartitionedMatrix,
    Requirement,
    RowPartition,
    Topology,
    analyze_comm,
    build_row_partition,
    split_local_blocks,
)
from .schemes import (
    DEFAULT_THRESHOLD,
    SCHEMES,
    CommPlan,
    CommStats,
    Message,
    plan_by_name,
    plan_nodal_optimal,
    plan_standard,
    plan_stats,
    plan_three_step,
    plan_two_step,
)
from .cluster import (
    ExecutionTrace,
    MissingRowError,
    VirtualCluster,
    collect,
    distribute,
    execute_plan,
    fused_allreduce,
    spmbv,
    tune_scheme,
)
from .models import (
    MachineParams,
    ModelPrediction,
    ceil_log2,
    collective_time,
    computation_time,
    ecg_iteration_model,
    maxrate_time,
    model_2step,
    model_3step,
    postal_time,
)
from .solvers import (
    EcgState,
    SolveReport,
    SplitOperator,
    cg_solve,
    ecg_solve,
    iteration_flops,
    split_residual,
)
from .problems import (
    MatrixMarketError,
    generate_problem,
    laplace_1d,
    laplace_2d,
    load_matrix_market,
    peek_matrix_market,
    save_matrix_market,
)

__version__ = "0.1.0"

__all__ = [
    "BlockVector", "BreakdownError", "CsrMatrix", "cholesky", "gram_product",
    "tri_solve_multi_rhs",
    "CommPattern", "PartitionedMatrix", "Requirement", "RowPartition",
    "Topology", "analyze_comm", "build_row_partition", "split_local_blocks",
    "DEFAULT_THRESHOLD", "SCHEMES", "CommPlan", "CommStats", "Message",
    "plan_by_name", "plan_nodal_optimal", "plan_standard", "plan_stats",
    "plan_three_step", "plan_two_step",
    "ExecutionTrace", "MissingRowError", "VirtualCluster", "collect",
    "distribute", "execute_plan", "fused_allreduce", "spmbv", "tune_scheme",
    "MachineParams", "ModelPrediction", "ceil_log2", "collective_time",
    "computation_time", "ecg_iteration_model", "maxrate_time", "model_2step",
    "model_3step", "postal_time",
    "EcgState", "SolveReport", "SplitOperator", "cg_solve", "ecg_solve",
    "iteration_flops", "split_residual",
    "MatrixMarketError", "generate_problem", "laplace_1d", "laplace_2d",
    "load_matrix_market", "peek_matrix_market", "save_matrix_market",
    "__version__",
]
