"""Loaders for public ISO load-data directories.

Frozen per-dataset CSV contracts (UTF-8, header row required):

===== ============  =========== ========= =============
name  id column     value       grid      aggregate id
===== ============  =========== ========= =============
CAISO ``area_id``   ``load_mw`` hourly    ``CAISO``
NYISO ``zone_name`` ``load_mw`` 5 minutes ``NYISO``
ISONE ``state``     ``load_mw`` hourly    ``ISONE``
PJM   ``zone``      ``load_mw`` 5 minutes ``PJM``
===== ============  =========== ========= =============

Every file carries a ``timestamp`` column (epoch seconds or a naive local
datetime string; no DST correction is applied). All ``*.csv`` files in the
directory are read in sorted filename order and grouped by the id column;
the instance whose id equals the aggregate id becomes the parent and every
other instance a child of it. Empty value cells are forward- then
back-filled and flagged in ``filled_mask``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from powerpm.data.series import InstanceSeries, Level
from powerpm.errors import IngestionError, SchemaError


@dataclass(frozen=True)
class IsoSchema:
    name: str
    id_column: str
    value_column: str
    frequency_seconds: int
    aggregate_id: str


ISO_SCHEMAS = {
    "CAISO": IsoSchema("CAISO", "area_id", "load_mw", 3600, "CAISO"),
    "NYISO": IsoSchema("NYISO", "zone_name", "load_mw", 300, "NYISO"),
    "ISONE": IsoSchema("ISONE", "state", "load_mw", 3600, "ISONE"),
    "PJM": IsoSchema("PJM", "zone", "load_mw", 300, "PJM"),
}


def _parse_timestamps(raw: list[str], file: str) -> np.ndarray:
    try:
        return np.array([int(v) for v in raw], dtype=np.int64)
    except ValueError:
        pass
    try:
        parsed = pd.to_datetime(raw)
    except (ValueError, TypeError) as exc:
        raise IngestionError(f"{file}: unparseable timestamp ({exc})") from None
    return (parsed.astype("int64") // 1_000_000_000).to_numpy()


def _fill_missing(values: list[float | None]) -> tuple[np.ndarray, np.ndarray]:
    """Forward-fill then back-fill; returns (values, filled_mask)."""
    arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    mask = ~np.isfinite(arr)
    if mask.all():
        raise IngestionError("all values missing for an instance")
    if mask.any():
        idx = np.where(~mask, np.arange(len(arr)), -1)
        np.maximum.accumulate(idx, out=idx)
        first_good = int(np.argmax(~mask))
        idx[idx < 0] = first_good
        arr = arr[idx]
    return arr, mask


def load_iso_dataset(path: str | Path, schema_name: str) -> list[InstanceSeries]:
    """Load an ISO directory into one aggregate series plus child series."""
    if schema_name not in ISO_SCHEMAS:
        raise SchemaError(f"unknown ISO schema {schema_name!r}; expected one of {sorted(ISO_SCHEMAS)}")
    schema = ISO_SCHEMAS[schema_name]
    root = Path(path)
    files = sorted(root.glob("*.csv"))
    if not files:
        raise SchemaError(f"no files matched schema under {root}")

    # (timestamp raw, value, file, row index) per instance, in encounter order.
    rows_by_id: dict[str, list[tuple[str, float | None, str, int]]] = {}
    for file in files:
        with open(file, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in ("timestamp", schema.id_column, schema.value_column):
                if col not in header:
                    raise SchemaError(f"{file.name}: missing required column {col!r}")
            for i, row in enumerate(reader):
                raw_value = (row[schema.value_column] or "").strip()
                value = None
                if raw_value and raw_value.lower() not in ("nan", "na", "null"):
                    try:
                        value = float(raw_value)
                    except ValueError:
                        raise IngestionError(
                            f"{file.name} row {i}: bad value {raw_value!r}"
                        ) from None
                rows_by_id.setdefault(row[schema.id_column], []).append(
                    (row["timestamp"], value, file.name, i)
                )

    if schema.aggregate_id not in rows_by_id:
        raise SchemaError(
            f"no aggregate instance {schema.aggregate_id!r} found; "
            f"got ids {sorted(rows_by_id)}"
        )

    out: list[InstanceSeries] = []
    order = [schema.aggregate_id] + sorted(i for i in rows_by_id if i != schema.aggregate_id)
    for instance_id in order:
        rows = rows_by_id[instance_id]
        timestamps = _parse_timestamps([r[0] for r in rows], rows[0][2])
        deltas = np.diff(timestamps)
        if np.any(deltas <= 0):
            bad = int(np.argmax(deltas <= 0)) + 1
            file, row_idx = rows[bad][2], rows[bad][3]
            raise IngestionError(
                f"{file} row {row_idx}: non-monotone timestamp for {instance_id!r} "
                f"({rows[bad][0]!r} follows {rows[bad - 1][0]!r})"
            )
        values, filled = _fill_missing([r[1] for r in rows])
        is_aggregate = instance_id == schema.aggregate_id
        out.append(
            InstanceSeries(
                instance_id=instance_id,
                level=Level.CITY if is_aggregate else Level.DISTRICT,
                parent_id=None if is_aggregate else schema.aggregate_id,
                timestamps=timestamps,
                values=values,
                frequency_seconds=schema.frequency_seconds,
                filled_mask=filled if filled.any() else None,
            )
        )
    return out
