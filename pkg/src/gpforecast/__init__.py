"""Linear-kernel Gaussian-process forecasting of lane-change trajectories.

The GP is trained on a cumulative history of completed lane changes plus the
observed prefix of the ongoing one, and benchmarked against a constant-speed
baseline over 0.1-3.0 s horizons.
"""

from .evaluation import (
    EvalSettings,
    EvaluationGrid,
    ExperimentReport,
    ForecastRecord,
    emit_report,
    p95_abs_error,
    reception_rate,
    run_experiment,
    run_history_sweep,
    run_horizon_sweep,
)
from .exceptions import (
    DuplicateManeuver,
    EmptyInput,
    FactorizationFailure,
    FormatError,
    InsufficientPrefix,
    OptimizationDiverged,
    TooManyBadRows,
)
from .gp import (
    GpPosterior,
    LinearKernelGPRegressor,
    LinearKernelParams,
    Prediction,
    TrainingSet,
    fit_posterior,
    gram_matrix,
    kernel_eval,
    log_marginal_likelihood,
    optimize_hyperparams,
    predict,
)
from .history import (
    ManeuverBank,
    append_completed,
    assemble_training_set,
    build_bank,
    load_bank,
    save_bank,
    warm_start_params,
)
from .ingest import ManeuverWindow, extract_lane_changes, normalize, parse_trajectories, synth_corpus
from .models import (
    CompoundForecaster,
    ConstantSpeedForecaster,
    ForecastRequest,
    GpForecaster,
    compound_forecast,
    constant_speed_forecast,
    gp_forecast,
)

__version__ = "0.1.0"
