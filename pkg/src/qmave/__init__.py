"""Single-index quantile regression via alternating local-linear fits."""

from .core import (
    BandwidthRule,
    KernelSpec,
    LossSpec,
    check_loss,
    check_subgradient,
    default_bandwidth,
    kernel_eval,
)
from .errors import (
    ConvergenceError,
    DegenerateDirectionError,
    DegenerateProblemError,
    DegenerateUpdateError,
    InsufficientDataError,
    InsufficientLocalDataError,
    InvalidInputError,
    QmaveError,
)
from .fit import (
    IndexFit,
    QmaveConfig,
    estimation_error,
    inner_step,
    outer_problem,
    outer_step,
    qmave_fit,
)
from .initial import (
    InitialEstimate,
    TrimSpec,
    ade_initial_estimate,
    opg_direction,
    trim_mask,
)
from .localfit import Dataset, LocalFit, local_linear_full_fit, local_linear_index_fit
from .simulate import (
    DEFAULT_THETA0,
    BenchmarkReport,
    BenchmarkRow,
    NoiseLaw,
    SimConfig,
    gen_design,
    gen_model8,
    gen_noise,
    run_benchmark,
)
from .solver import (
    SolverOptions,
    WeightedRegressionProblem,
    qr_oracle,
    solve_weighted_ls,
    solve_weighted_qr,
    weighted_quantile,
)

__version__ = "0.1.0"

__all__ = [
    "BandwidthRule",
    "BenchmarkReport",
    "BenchmarkRow",
    "ConvergenceError",
    "Dataset",
    "DEFAULT_THETA0",
    "DegenerateDirectionError",
    "DegenerateProblemError",
    "DegenerateUpdateError",
    "IndexFit",
    "InitialEstimate",
    "InsufficientDataError",
    "InsufficientLocalDataError",
    "InvalidInputError",
    "KernelSpec",
    "LocalFit",
    "LossSpec",
    "NoiseLaw",
    "QmaveConfig",
    "QmaveError",
    "SimConfig",
    "SolverOptions",
    "TrimSpec",
    "WeightedRegressionProblem",
    "ade_initial_estimate",
    "check_loss",
    "check_subgradient",
    "default_bandwidth",
    "estimation_error",
    "gen_design",
    "gen_model8",
    "gen_noise",
    "inner_step",
    "kernel_eval",
    "local_linear_full_fit",
    "local_linear_index_fit",
    "opg_direction",
    "outer_problem",
    "outer_step",
    "qmave_fit",
    "qr_oracle",
    "run_benchmark",
    "solve_weighted_ls",
    "solve_weighted_qr",
    "trim_mask",
    "weighted_quantile",
]
