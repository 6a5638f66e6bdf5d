"""CSV ingestion and calendar features."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

ROLES = ("target", "covariate_weather", "covariate_time")


class DataError(ValueError):
    """Malformed input data; ``row`` is the 1-based data row when known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


@dataclass
class SeriesBatch:
    values: np.ndarray  # B x L x N, NaN where missing
    timestamps: np.ndarray  # L epoch seconds
    channel_names: list
    channel_roles: list
    mask_missing: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.mask_missing is None:
            self.mask_missing = np.isnan(self.values)
        if len(self.channel_roles) != self.values.shape[2]:
            raise DataError("one role per channel required")
        for r in self.channel_roles:
            if r not in ROLES:
                raise DataError(f"unknown channel role {r!r}")

    @property
    def shape(self):
        return self.values.shape

    def channels(self, role: str) -> list:
        return [i for i, r in enumerate(self.channel_roles) if r == role]

    @property
    def step(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0]) if len(self.timestamps) > 1 else 0.0


def parse_timestamp(text: str) -> float:
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def load_csv(path, schema: dict | None = None) -> SeriesBatch:
    """Read an ETT-layout CSV (``date,<ch1>,...``) into a single-series batch.

    ``schema`` maps column name to role; unlisted columns default to
    ``target``. Empty cells become NaN and are flagged in ``mask_missing``.
    """
    schema = schema or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file") from None
        if len(header) < 2:
            raise DataError("need a timestamp column and at least one channel")
        names = [h.strip() for h in header[1:]]
        unknown = set(schema) - set(names)
        if unknown:
            raise DataError(f"schema names unknown columns {sorted(unknown)}")
        stamps, rows = [], []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", row=i)
            try:
                ts = parse_timestamp(row[0])
            except ValueError:
                raise DataError(f"unparseable timestamp {row[0]!r}", row=i) from None
            if stamps and ts <= stamps[-1]:
                raise DataError("timestamps not strictly increasing", row=i)
            vals = []
            for cell in row[1:]:
                cell = cell.strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"non-numeric value {cell!r}", row=i) from None
            stamps.append(ts)
            rows.append(vals)
    if not rows:
        raise DataError("no data rows")
    stamps = np.asarray(stamps)
    if len(stamps) > 2:
        steps = np.diff(stamps)
        bad = np.flatnonzero(np.abs(steps - steps[0]) > 1e-6)
        if bad.size:
            raise DataError("non-uniform sampling step", row=int(bad[0]) + 2)
    roles = [schema.get(n, "target") for n in names]
    return SeriesBatch(np.asarray(rows)[None], stamps, names, roles)


def write_csv(path, timestamps, values, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *names])
        for ts, row in zip(timestamps, values):
            stamp = datetime.fromtimestamp(float(ts), tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")
            w.writerow([stamp, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def time_features(timestamps, holidays=()) -> np.ndarray:
    """``L x 5`` calendar features: hour sin/cos, weekday sin/cos, holiday flag.

    ``holidays`` holds ISO dates (``YYYY-MM-DD``).
    """
    ts = np.asarray(timestamps, dtype=float)
    hours = (ts % 86400.0) / 3600.0
    days = np.floor(ts / 86400.0)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    hol = {datetime.fromisoformat(h).date() for h in holidays}
    flag = np.array(
        [datetime.fromtimestamp(t, tz=timezone.utc).date() in hol for t in ts], dtype=float
    ) if hol else np.zeros(len(ts))
    return np.stack(
        [
            np.sin(2 * np.pi * hours / 24.0),
            np.cos(2 * np.pi * hours / 24.0),
            np.sin(2 * np.pi * weekday / 7.0),
            np.cos(2 * np.pi * weekday / 7.0),
            flag,
        ],
        axis=-1,
    )
