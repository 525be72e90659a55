from powerpm.data.exogenous import DEFAULT_WEATHER_VOCABULARY, ExogenousCoder
from powerpm.data.iso import ISO_SCHEMAS, load_iso_dataset
from powerpm.data.series import (
    EMPTY_SCHEMA,
    ExogenousSchema,
    InstanceSeries,
    Level,
    SplitPlan,
    Window,
    WindowBatch,
    windows_to_batch,
)
from powerpm.data.synthetic import (
    ExogenousSeries,
    SynthConfig,
    SynthDataset,
    UserLabels,
    load_synth_dataset,
    synth_generate,
    write_synth_dataset,
)
from powerpm.data.windows import (
    apply_normalization,
    chronological_split,
    compute_norm_stats,
    slice_windows,
)

__all__ = [
    "DEFAULT_WEATHER_VOCABULARY",
    "EMPTY_SCHEMA",
    "ExogenousCoder",
    "ExogenousSchema",
    "ExogenousSeries",
    "ISO_SCHEMAS",
    "InstanceSeries",
    "Level",
    "SplitPlan",
    "SynthConfig",
    "SynthDataset",
    "UserLabels",
    "Window",
    "WindowBatch",
    "apply_normalization",
    "chronological_split",
    "compute_norm_stats",
    "load_iso_dataset",
    "load_synth_dataset",
    "slice_windows",
    "synth_generate",
    "windows_to_batch",
    "write_synth_dataset",
]
