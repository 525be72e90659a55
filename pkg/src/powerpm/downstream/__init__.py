from powerpm.downstream.finetune import (
    FinetuneConfig,
    FinetuneResult,
    TaskData,
    finetune,
    persistence_metrics,
    select_fraction,
)
from powerpm.downstream.heads import (
    ClassifyHead,
    ForecastHead,
    ImputeMask,
    impute_eval_positions,
    patches_touching,
)
from powerpm.downstream.metrics import (
    accuracy,
    binary_counts,
    fbeta,
    mae,
    metric_suite,
    mse,
    precision_recall,
)
from powerpm.downstream.tasks import (
    ABLATION_VARIANTS,
    ANOMALY,
    CLASSIFY,
    DATA_FRACTIONS,
    FORECAST,
    FORECAST_HORIZONS,
    FROZEN,
    FULL_FT,
    IMPUTE,
    IMPUTE_RATIOS,
    AblationFlags,
    TaskSpec,
)

__all__ = [
    "ABLATION_VARIANTS",
    "ANOMALY",
    "AblationFlags",
    "CLASSIFY",
    "ClassifyHead",
    "DATA_FRACTIONS",
    "FORECAST",
    "FORECAST_HORIZONS",
    "FROZEN",
    "FULL_FT",
    "FinetuneConfig",
    "FinetuneResult",
    "ForecastHead",
    "IMPUTE",
    "IMPUTE_RATIOS",
    "ImputeMask",
    "TaskData",
    "TaskSpec",
    "accuracy",
    "binary_counts",
    "fbeta",
    "finetune",
    "impute_eval_positions",
    "mae",
    "metric_suite",
    "mse",
    "patches_touching",
    "persistence_metrics",
    "precision_recall",
    "select_fraction",
]
