"""Categorical encoding of exogenous variables (weather type, temperatures).

Weather labels map to their index in a closed vocabulary. Temperatures are
continuous and the embedding table wants categorical codes, so they are
discretized into 1-degree-wide bins over a configured [lo, hi] range and
clamped at the edges: code = clip(floor(t) - lo, 0, hi - lo).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from powerpm.data.series import ExogenousSchema
from powerpm.errors import EncodingError

DEFAULT_WEATHER_VOCABULARY = ("sunny", "cloudy", "rainy", "storm")


@dataclass(frozen=True)
class ExogenousCoder:
    """Maps raw (weather label, temperatures) observations to integer codes."""

    weather_vocabulary: tuple[str, ...] = DEFAULT_WEATHER_VOCABULARY
    temp_lo: int = -20
    temp_hi: int = 45
    temp_variables: tuple[str, ...] = ("temp_max", "temp_min")

    def __post_init__(self):
        if self.temp_hi <= self.temp_lo:
            raise ValueError("temperature range must satisfy lo < hi")
        if len(set(self.weather_vocabulary)) != len(self.weather_vocabulary):
            raise ValueError("weather vocabulary has duplicates")

    @property
    def num_temp_bins(self) -> int:
        return self.temp_hi - self.temp_lo + 1

    @property
    def schema(self) -> ExogenousSchema:
        variables = [("weather", len(self.weather_vocabulary))]
        variables += [(name, self.num_temp_bins) for name in self.temp_variables]
        return ExogenousSchema(variables=tuple(variables))

    def encode_weather(self, labels) -> np.ndarray:
        index = {label: i for i, label in enumerate(self.weather_vocabulary)}
        out = np.empty(len(labels), dtype=np.int64)
        for i, label in enumerate(labels):
            try:
                out[i] = index[label]
            except KeyError:
                raise EncodingError(f"unknown weather label {label!r}") from None
        return out

    def encode_temperature(self, temps) -> np.ndarray:
        temps = np.asarray(temps, dtype=np.float64)
        if not np.all(np.isfinite(temps)):
            raise EncodingError("temperature contains non-finite values")
        codes = np.floor(temps).astype(np.int64) - self.temp_lo
        return np.clip(codes, 0, self.temp_hi - self.temp_lo)

    def decode_temperature(self, code: int) -> tuple[float, float]:
        """Return the [lo, hi) bounds of a temperature bin."""
        n_bins = self.num_temp_bins
        if not 0 <= code < n_bins:
            raise EncodingError(f"temperature code {code} outside [0, {n_bins})")
        lo = self.temp_lo + code
        return float(lo), float(lo + 1)

    def encode(self, weather_labels, temperatures: dict[str, np.ndarray]) -> np.ndarray:
        """Encode aligned observations into a [T, K] integer code array."""
        columns = [self.encode_weather(weather_labels)]
        for name in self.temp_variables:
            if name not in temperatures:
                raise EncodingError(f"missing temperature series {name!r}")
            columns.append(self.encode_temperature(temperatures[name]))
        lengths = {len(c) for c in columns}
        if len(lengths) != 1:
            raise EncodingError("exogenous series lengths differ")
        return np.stack(columns, axis=1)
