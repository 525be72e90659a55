"""Core data containers: instance series, windows, schemas, split plans."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from powerpm.errors import SplitError


class Level(str, Enum):
    CITY = "city"
    DISTRICT = "district"
    USER = "user"
    CLUSTER = "cluster"


@dataclass
class InstanceSeries:
    """One metered entity's load series at a fixed sampling frequency.

    ``timestamps`` are epoch seconds, strictly increasing with constant
    spacing equal to ``frequency_seconds``. ``filled_mask`` marks points
    that were gap-filled at ingestion; it is None for pristine data.
    """

    instance_id: str
    level: Level
    parent_id: str | None
    timestamps: np.ndarray
    values: np.ndarray
    frequency_seconds: int
    filled_mask: np.ndarray | None = None

    def __post_init__(self):
        self.level = Level(self.level)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.ndim != 1 or self.values.ndim != 1:
            raise ValueError("timestamps and values must be 1-D")
        if len(self.timestamps) != len(self.values):
            raise ValueError(
                f"{self.instance_id}: {len(self.timestamps)} timestamps "
                f"vs {len(self.values)} values"
            )
        if self.frequency_seconds <= 0:
            raise ValueError("frequency_seconds must be positive")
        if len(self.timestamps) > 1:
            steps = np.diff(self.timestamps)
            if not np.all(steps == self.frequency_seconds):
                bad = int(np.argmax(steps != self.frequency_seconds))
                raise ValueError(
                    f"{self.instance_id}: timestamp spacing at index {bad + 1} "
                    f"is {steps[bad]} s, expected {self.frequency_seconds} s"
                )
        if not np.all(np.isfinite(self.values)):
            bad = int(np.argmax(~np.isfinite(self.values)))
            raise ValueError(f"{self.instance_id}: non-finite value at index {bad}")
        if self.level == Level.CITY and self.parent_id is not None:
            raise ValueError(f"{self.instance_id}: city series must not have a parent")
        if self.level == Level.USER and not self.parent_id:
            raise ValueError(f"{self.instance_id}: user series must name a district parent")
        if self.filled_mask is not None:
            self.filled_mask = np.asarray(self.filled_mask, dtype=bool)
            if self.filled_mask.shape != self.values.shape:
                raise ValueError(f"{self.instance_id}: filled_mask shape mismatch")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ExogenousSchema:
    """Ordered categorical exogenous variables and their cardinalities."""

    variables: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "variables", tuple((str(n), int(c)) for n, c in self.variables)
        )
        for name, card in self.variables:
            if card < 1:
                raise ValueError(f"variable {name!r}: cardinality must be >= 1")

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.variables)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Row offset of each variable inside the concatenated embedding table."""
        out, acc = [], 0
        for _, card in self.variables:
            out.append(acc)
            acc += card
        return tuple(out)

    @property
    def total_rows(self) -> int:
        return sum(self.cardinalities)

    def digest(self) -> str:
        payload = json.dumps(list(self.variables)).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


EMPTY_SCHEMA = ExogenousSchema(variables=())


@dataclass(frozen=True)
class Window:
    """A contiguous slice of one instance's series with aligned codes."""

    instance_id: str
    values: np.ndarray
    t_start: int
    t_end: int
    frequency_seconds: int
    codes: np.ndarray | None = None
    fill_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        span = (self.t_end - self.t_start) // self.frequency_seconds + 1
        if span != len(self.values):
            raise ValueError(
                f"window covers {span} points but holds {len(self.values)} values"
            )
        if self.codes is not None:
            codes = np.asarray(self.codes, dtype=np.int64)
            if codes.ndim != 2 or codes.shape[0] != len(self.values):
                raise ValueError("codes must be [window_len, num_variables]")
            object.__setattr__(self, "codes", codes)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class WindowBatch:
    """A stack of equal-length windows with aligned exogenous codes."""

    x: np.ndarray                 # [N, T_w]
    o: np.ndarray                 # [N, T_w, K]
    node_ids: list[str]
    t_start: np.ndarray           # [N] epoch seconds
    t_end: np.ndarray             # [N] epoch seconds
    frequency_seconds: int
    schema: ExogenousSchema = EMPTY_SCHEMA

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.o = np.asarray(self.o, dtype=np.int64)
        self.t_start = np.asarray(self.t_start, dtype=np.int64)
        self.t_end = np.asarray(self.t_end, dtype=np.int64)
        n, t_w = self.x.shape
        if self.o.shape[:2] != (n, t_w) or self.o.shape[2] != self.schema.num_variables:
            raise ValueError(
                f"codes shape {self.o.shape} inconsistent with x {self.x.shape} "
                f"and schema K={self.schema.num_variables}"
            )
        if len(self.node_ids) != n or len(self.t_start) != n or len(self.t_end) != n:
            raise ValueError("per-window metadata length mismatch")
        spans = (self.t_end - self.t_start) // self.frequency_seconds + 1
        if not np.all(spans == t_w):
            raise ValueError("window span does not match window length")
        for k, (_, card) in enumerate(self.schema.variables):
            col = self.o[:, :, k]
            if col.size and (col.min() < 0 or col.max() >= card):
                raise ValueError(f"exogenous codes out of range for variable {k}")

    @property
    def num_windows(self) -> int:
        return self.x.shape[0]

    @property
    def window_len(self) -> int:
        return self.x.shape[1]


def windows_to_batch(windows: list[Window], schema: ExogenousSchema) -> WindowBatch:
    """Stack same-length windows into a batch; codes default to zeros for K=0."""
    if not windows:
        raise ValueError("cannot batch zero windows")
    t_w = len(windows[0])
    k = schema.num_variables
    x = np.stack([w.values for w in windows])
    if k == 0:
        o = np.zeros((len(windows), t_w, 0), dtype=np.int64)
    else:
        o = np.stack([
            w.codes if w.codes is not None else np.zeros((t_w, k), dtype=np.int64)
            for w in windows
        ])
    return WindowBatch(
        x=x,
        o=o,
        node_ids=[w.instance_id for w in windows],
        t_start=np.array([w.t_start for w in windows]),
        t_end=np.array([w.t_end for w in windows]),
        frequency_seconds=windows[0].frequency_seconds,
        schema=schema,
    )


@dataclass
class SplitPlan:
    """Chronological train/val/test boundaries plus train-only normalization."""

    ratios: tuple[float, float, float]
    train_end: int                       # last train window start time
    val_end: int                         # last val window start time
    norm_stats: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise SplitError(f"split ratios {self.ratios} do not sum to 1")
        if not (self.train_end < self.val_end):
            raise SplitError("split boundaries are not chronological")
