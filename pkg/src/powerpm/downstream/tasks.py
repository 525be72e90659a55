"""Downstream task descriptors and ablation toggles."""

from __future__ import annotations

from dataclasses import dataclass

from powerpm.errors import TaskError

FORECAST = "forecast"
IMPUTE = "impute"
ANOMALY = "anomaly"
CLASSIFY = "classify"
FAMILIES = (FORECAST, IMPUTE, ANOMALY, CLASSIFY)

FULL_FT = "full_ft"
FROZEN = "frozen"

FORECAST_HORIZONS = (4, 96, 288, 672)
IMPUTE_RATIOS = (0.125, 0.25, 0.375, 0.5)
DATA_FRACTIONS = (0.1, 0.3, 0.6, 1.0)

_DEFAULT_METRICS = {
    FORECAST: ("MSE", "MAE"),
    IMPUTE: ("MSE", "MAE"),
    ANOMALY: ("precision", "recall", "F0.5", "F1", "accuracy"),
    CLASSIFY: ("accuracy",),
}

KNOWN_METRICS = ("MSE", "MAE", "precision", "recall", "F0.5", "F1", "accuracy")


@dataclass(frozen=True)
class TaskSpec:
    family: str
    horizon: int | None = None
    mask_ratio: float | None = None
    n_classes: int | None = None
    metrics: tuple[str, ...] = ()
    regime: str = FULL_FT
    data_fraction: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise TaskError(f"unknown task family {self.family!r}")
        if self.regime not in (FULL_FT, FROZEN):
            raise TaskError(f"unknown fine-tune regime {self.regime!r}")
        if not any(abs(self.data_fraction - f) < 1e-9 for f in DATA_FRACTIONS):
            raise TaskError(
                f"data_fraction {self.data_fraction} not in {DATA_FRACTIONS}"
            )
        if self.family == FORECAST:
            if self.horizon not in FORECAST_HORIZONS:
                raise TaskError(f"forecast horizon {self.horizon} not in {FORECAST_HORIZONS}")
        elif self.family == IMPUTE:
            if self.mask_ratio is None or not any(
                abs(self.mask_ratio - r) < 1e-9 for r in IMPUTE_RATIOS
            ):
                raise TaskError(f"impute mask_ratio {self.mask_ratio} not in {IMPUTE_RATIOS}")
        elif self.family == CLASSIFY:
            if self.n_classes not in (2, 4):
                raise TaskError(f"classify n_classes {self.n_classes} not in (2, 4)")
        elif self.family == ANOMALY:
            if self.n_classes not in (None, 2):
                raise TaskError("anomaly detection is binary")
            object.__setattr__(self, "n_classes", 2)
        metrics = tuple(self.metrics) or _DEFAULT_METRICS[self.family]
        for m in metrics:
            if m not in KNOWN_METRICS:
                raise TaskError(f"unknown metric {m!r}")
        if self.family == ANOMALY and "F0.5" not in metrics:
            raise TaskError("anomaly tasks must report F0.5")
        object.__setattr__(self, "metrics", metrics)

    def label(self) -> str:
        if self.family == FORECAST:
            detail = f"h{self.horizon}"
        elif self.family == IMPUTE:
            detail = f"r{self.mask_ratio}"
        else:
            detail = f"c{self.n_classes}"
        return f"{self.family}-{detail}-{self.regime}-f{self.data_fraction}"


@dataclass(frozen=True)
class AblationFlags:
    no_hierarchy: bool = False
    random_mask_only: bool = False
    no_contrastive: bool = False
    no_exogenous: bool = False

    @property
    def is_full_model(self) -> bool:
        return not (
            self.no_hierarchy or self.random_mask_only
            or self.no_contrastive or self.no_exogenous
        )

    def label(self) -> str:
        if self.is_full_model:
            return "full"
        parts = []
        if self.no_hierarchy:
            parts.append("-H")
        if self.random_mask_only:
            parts.append("-M")
        if self.no_contrastive:
            parts.append("-C")
        if self.no_exogenous:
            parts.append("-E")
        return "".join(parts)


ABLATION_VARIANTS = (
    AblationFlags(),
    AblationFlags(no_hierarchy=True),
    AblationFlags(random_mask_only=True),
    AblationFlags(no_contrastive=True),
    AblationFlags(no_exogenous=True),
)
