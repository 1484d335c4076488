"""Loading, validating and profiling of raw PV measurement tables.

The wide CSV format has one ISO-8601 timestamp column followed by one
column per system.  Missing measurements are stored as ``NaN`` in memory.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_MISSING_TOKENS = frozenset({"", "NaN", "nan", "NA"})
MINUTES_PER_DAY = 1440


class DataError(ValueError):
    """Raised when an input table or metadata file violates its contract."""


def _parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    # Wall-clock time is kept; no DST handling.
    return np.datetime64(stamp.replace(tzinfo=None), "m")


def _format_timestamp(stamp: np.datetime64) -> str:
    return str(np.datetime_as_string(stamp, unit="m"))


def _check_grid(timestamps: np.ndarray, first_line: int = 2) -> int:
    """Return the constant step in minutes, or raise naming the bad row."""
    if len(timestamps) < 2:
        raise DataError("need at least two timestamps to infer the resolution")
    steps = np.diff(timestamps).astype("timedelta64[m]").astype(np.int64)
    step = int(steps[0])
    if step <= 0:
        raise DataError(f"timestamps not increasing at line {first_line + 1}")
    bad = np.flatnonzero(steps != step)
    if bad.size:
        raise DataError(
            f"irregular timestamp grid at line {first_line + int(bad[0]) + 1}: "
            f"expected step {step} min, got {int(steps[bad[0]])} min"
        )
    return step


@dataclass(frozen=True)
class RawSeriesTable:
    """Per-system power series on a shared regular time grid.

    ``values`` is U x T with ``NaN`` marking missing measurements.
    """

    timestamps: np.ndarray
    values: np.ndarray
    system_ids: tuple[str, ...]
    resolution: int = field(init=False)

    def __post_init__(self):
        timestamps = np.asarray(self.timestamps, dtype="datetime64[m]")
        values = np.array(self.values, dtype=np.float64)
        ids = tuple(str(s) for s in self.system_ids)
        if values.ndim != 2 or values.shape != (len(ids), len(timestamps)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"{len(ids)} systems x {len(timestamps)} timestamps"
            )
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise DataError(f"duplicate system id(s): {', '.join(dupes)}")
        if np.isinf(values).any():
            raise DataError("infinite value in series table")
        neg = np.argwhere(values < 0)
        if neg.size:
            u, t = neg[0]
            raise DataError(f"negative value {values[u, t]} for system {ids[u]} at step {t}")
        step = _check_grid(timestamps)
        timestamps.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "system_ids", ids)
        object.__setattr__(self, "resolution", step)

    @property
    def n_systems(self) -> int:
        return len(self.system_ids)

    @property
    def n_steps(self) -> int:
        return len(self.timestamps)

    def missing_count(self) -> int:
        return int(np.isnan(self.values).sum())

    def index_of(self, system_id: str) -> int:
        try:
            return self.system_ids.index(system_id)
        except ValueError:
            raise KeyError(f"unknown system id {system_id!r}") from None

    def subset(self, system_ids: Sequence[str]) -> "RawSeriesTable":
        rows = [self.index_of(s) for s in system_ids]
        return RawSeriesTable(self.timestamps, self.values[rows], tuple(system_ids))


@dataclass(frozen=True)
class SystemMetadata:
    system_id: str
    capacity: float
    tilt: float | None = None
    azimuth: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise DataError(f"capacity of system {self.system_id} must be > 0, got {self.capacity}")
        if self.tilt is not None and not 0.0 <= self.tilt <= 90.0:
            raise DataError(f"tilt of system {self.system_id} outside [0, 90]: {self.tilt}")
        if self.azimuth is not None and not 0.0 <= self.azimuth < 360.0:
            raise DataError(f"azimuth of system {self.system_id} outside [0, 360): {self.azimuth}")


@dataclass(frozen=True)
class EntityProfileSet:
    """Complete daily profiles of one system.

    ``day_indices`` are 0-based positions of the surviving days in the
    original calendar.
    """

    system_id: str
    profiles: np.ndarray
    day_indices: np.ndarray
    n_total_days: int

    @property
    def n_u(self) -> int:
        return int(self.profiles.shape[0])

    @property
    def excluded(self) -> bool:
        return self.n_u == 0


def load_table(path, missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS) -> RawSeriesTable:
    """Read a wide CSV into a :class:`RawSeriesTable`.

    Cells matching one of ``missing_tokens`` (after stripping whitespace)
    become ``NaN``.  Anything else must parse as a finite, non-negative
    number.
    """
    tokens = {t.strip() for t in missing_tokens}
    path = Path(path)
    if not path.exists():
        raise DataError(f"series file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty series file: {path}") from None
        ids = [h.strip() for h in header[1:]]
        if len(ids) < 2:
            raise DataError(f"need at least 2 systems, found {len(ids)}")
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise DataError(f"duplicate system id(s): {', '.join(dupes)}")
        stamps, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {line_no}: expected {len(header)} columns, got {len(row)}")
            try:
                stamps.append(_parse_timestamp(row[0]))
            except ValueError:
                raise DataError(f"line {line_no}: bad timestamp {row[0]!r}") from None
            parsed = []
            for col, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell in tokens:
                    parsed.append(math.nan)
                    continue
                try:
                    val = float(cell)
                except ValueError:
                    raise DataError(
                        f"line {line_no}, system {ids[col]}: unparseable cell {cell!r}"
                    ) from None
                if not math.isfinite(val):
                    raise DataError(
                        f"line {line_no}, system {ids[col]}: non-finite cell {cell!r} "
                        "is not a declared missing token"
                    )
                if val < 0:
                    raise DataError(f"line {line_no}, system {ids[col]}: negative value {val}")
                parsed.append(val)
            rows.append(parsed)
    if not rows:
        raise DataError(f"series file has no data rows: {path}")
    timestamps = np.array(stamps, dtype="datetime64[m]")
    _check_grid(timestamps)
    values = np.array(rows, dtype=np.float64).T
    return RawSeriesTable(timestamps, values, tuple(ids))


def write_table(table: RawSeriesTable, path, timestamp_header: str = "timestamp") -> None:
    """Write ``table`` as a wide CSV; floats use their shortest round-trip repr."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([timestamp_header, *table.system_ids])
        for t, stamp in enumerate(table.timestamps):
            col = table.values[:, t]
            writer.writerow(
                [_format_timestamp(stamp)] + ["" if math.isnan(v) else repr(float(v)) for v in col]
            )


def load_metadata(path) -> dict[str, SystemMetadata]:
    """Read the metadata CSV (system_id, capacity_wp, tilt_deg, azimuth_deg)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"metadata file not found: {path}")
    out: dict[str, SystemMetadata] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"system_id", "capacity_wp"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"metadata file lacks column(s): {', '.join(sorted(missing))}")
        for line_no, rec in enumerate(reader, start=2):
            sid = rec["system_id"].strip()
            if sid in out:
                raise DataError(f"line {line_no}: duplicate metadata record for {sid}")

            def _opt(key):
                text = (rec.get(key) or "").strip()
                return float(text) if text else None

            try:
                capacity = float(rec["capacity_wp"])
                out[sid] = SystemMetadata(sid, capacity, _opt("tilt_deg"), _opt("azimuth_deg"))
            except ValueError as exc:
                raise DataError(f"line {line_no}: {exc}") from None
    return out


def write_metadata(meta: Mapping[str, SystemMetadata], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system_id", "capacity_wp", "tilt_deg", "azimuth_deg"])
        for m in meta.values():
            writer.writerow([
                m.system_id,
                repr(float(m.capacity)),
                "" if m.tilt is None else repr(float(m.tilt)),
                "" if m.azimuth is None else repr(float(m.azimuth)),
            ])


def capacity_scale(
    table: RawSeriesTable, meta: Mapping[str, SystemMetadata], method: str = "capacity"
) -> np.ndarray:
    """Per-system divisor used for normalization.

    ``method="capacity"`` uses the metadata peak power; ``"empirical_max"``
    uses the largest observed value of each series instead.
    """
    if method == "capacity":
        missing = [s for s in table.system_ids if s not in meta]
        if missing:
            raise DataError(f"no metadata for system(s): {', '.join(missing)}")
        return np.array([meta[s].capacity for s in table.system_ids], dtype=np.float64)
    if method == "empirical_max":
        scale = np.full(table.n_systems, np.nan)
        observed = ~np.isnan(table.values)
        for u in range(table.n_systems):
            if observed[u].any():
                scale[u] = table.values[u, observed[u]].max()
        bad = [s for s, c in zip(table.system_ids, scale) if not c > 0]
        if bad:
            raise DataError(f"cannot estimate capacity from data for: {', '.join(bad)}")
        return scale
    raise ValueError(f"unknown normalization method {method!r}")


def normalize_by_capacity(
    table: RawSeriesTable, meta: Mapping[str, SystemMetadata] | None = None, method: str = "capacity"
) -> RawSeriesTable:
    scale = capacity_scale(table, meta or {}, method)
    return RawSeriesTable(table.timestamps, table.values / scale[:, None], table.system_ids)


def build_profiles(table: RawSeriesTable, profile_len: int = 96) -> list[EntityProfileSet]:
    """Split every series into calendar days and keep the fully observed ones."""
    T = table.n_steps
    if profile_len < 1 or T % profile_len:
        raise DataError(f"profile length {profile_len} does not divide series length {T}")
    if profile_len * table.resolution != MINUTES_PER_DAY:
        raise DataError(
            f"profile length {profile_len} at {table.resolution}-minute resolution "
            "does not span one day"
        )
    start = table.timestamps[0]
    if start != start.astype("datetime64[D]"):
        raise DataError(f"series must start at midnight, starts at {_format_timestamp(start)}")

    n_days = T // profile_len
    cube = table.values.reshape(table.n_systems, n_days, profile_len)
    complete = ~np.isnan(cube).any(axis=2)
    out = []
    for u, sid in enumerate(table.system_ids):
        days = np.flatnonzero(complete[u])
        out.append(EntityProfileSet(sid, cube[u, days].copy(), days, n_days))
        if days.size == 0:
            logger.warning("system %s has no complete day and is excluded", sid)
    return out


def pool_profiles(profile_sets: Sequence[EntityProfileSet]) -> np.ndarray:
    usable = [p.profiles for p in profile_sets if not p.excluded]
    if not usable:
        raise DataError("no complete profiles in any system")
    return np.vstack(usable)
