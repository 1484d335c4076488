"""Seeded synthetic PV fleets with known behaviour groups.

Each group has an archetype day: a truncated-cosine daylight bell whose
peak is shifted by a group-specific offset, multiplied by a group-specific
shading notch.  A fleet-wide weather factor scales each day, every system
adds multiplicative noise, and whole days go missing at random.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import RawSeriesTable, SystemMetadata, write_metadata, write_table

NOISE_SIGMA = 0.05
MAX_NORMALIZED = 1.2


@dataclass(frozen=True)
class SynthConfig:
    U: int = 60
    days: int = 120
    groups: int = 3
    resolution: int = 15
    missing_day_rate: float = 0.1
    global_outage: Optional[tuple[int, int]] = None
    angle_coupling: str = "coupled"
    seed: int = 0
    subday_gaps: bool = False
    start: str = "2021-01-01"

    def validate(self) -> None:
        if self.groups < 2 or self.U < self.groups:
            raise ValueError(f"need U >= groups >= 2, got U={self.U}, groups={self.groups}")
        if self.days < 1:
            raise ValueError("days must be positive")
        if self.resolution < 1 or 1440 % self.resolution:
            raise ValueError(f"resolution {self.resolution} min does not divide a day")
        if not 0.0 <= self.missing_day_rate < 1.0:
            raise ValueError("missing_day_rate must lie in [0, 1)")
        if self.global_outage is not None:
            a, b = self.global_outage
            if not (0 <= a < b <= self.days):
                raise ValueError(f"outage window {self.global_outage} not within [0, {self.days})")
        if self.angle_coupling not in ("coupled", "decoupled"):
            raise ValueError("angle_coupling must be 'coupled' or 'decoupled'")


@dataclass(frozen=True)
class GroupShape:
    peak_shift: float  # hours relative to solar noon
    notch_hour: float
    notch_depth: float
    notch_width: float = 0.6


def _group_shapes(G: int, rng: np.random.Generator) -> list[GroupShape]:
    shifts = rng.permutation(np.linspace(-1.5, 1.5, G))
    notch = rng.permutation(np.linspace(9.0, 15.0, G)) + rng.uniform(-0.3, 0.3, G)
    depth = rng.uniform(0.35, 0.75, G)
    return [GroupShape(float(s), float(h), float(d)) for s, d, h in zip(shifts, depth, notch)]


def daylight_half_width(day_of_year: np.ndarray) -> np.ndarray:
    """Half day length in hours, 6 +/- 2 over the year."""
    return 6.0 + 2.0 * np.sin(2 * np.pi * (day_of_year - 80) / 365.0)


def archetype_day(shape: GroupShape, hours: np.ndarray, half_width: float) -> np.ndarray:
    peak = 12.0 + shape.peak_shift
    z = (hours - peak) / half_width
    bell = np.where(np.abs(z) < 1.0, np.cos(0.5 * np.pi * z), 0.0)
    notch = 1.0 - shape.notch_depth * np.exp(-0.5 * ((hours - shape.notch_hour) / shape.notch_width) ** 2)
    return bell * notch


def generate(config: SynthConfig) -> tuple[RawSeriesTable, dict[str, SystemMetadata], np.ndarray]:
    """Return (raw series in W, metadata, ground-truth group per system)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    U, G, days = config.U, config.groups, config.days
    steps = 1440 // config.resolution
    hours = (np.arange(steps) + 0.5) * config.resolution / 60.0

    shapes = _group_shapes(G, rng)
    labels = rng.permutation(np.arange(U) % G)
    start = np.datetime64(config.start, "D")
    doy = (np.arange(days) + (start - start.astype("datetime64[Y]")).astype(int)) % 365
    half = daylight_half_width(doy)
    weather = np.clip(1.0 - 0.9 * rng.beta(2.0, 3.0, size=days), 0.1 + 1e-9, 1.0)

    clean = np.empty((G, days, steps))
    for g, shape in enumerate(shapes):
        for d in range(days):
            clean[g, d] = archetype_day(shape, hours, half[d]) * weather[d]

    capacity = np.round(rng.uniform(2000.0, 6000.0, size=U), 0)
    values = np.empty((U, days * steps))
    for u in range(U):
        sys_rng = np.random.default_rng([config.seed, u])
        noise = np.clip(1.0 + NOISE_SIGMA * sys_rng.standard_normal((days, steps)), 0.0, MAX_NORMALIZED)
        norm = clean[labels[u]] * noise
        gone = sys_rng.random(days) < config.missing_day_rate
        if config.subday_gaps:
            for d in np.flatnonzero(gone):
                length = int(sys_rng.integers(1, max(2, steps // 6)))
                first = int(sys_rng.integers(0, steps - length + 1))
                norm[d, first:first + length] = np.nan
        else:
            norm[gone] = np.nan
        if config.global_outage is not None:
            a, b = config.global_outage
            norm[a:b] = np.nan
        values[u] = (norm * capacity[u]).ravel()

    if config.angle_coupling == "coupled":
        centre_tilt = rng.permutation(np.linspace(15.0, 45.0, G))
        centre_az = rng.permutation(np.linspace(120.0, 240.0, G))
        tilt = centre_tilt[labels] + rng.uniform(-2.0, 2.0, U)
        azimuth = centre_az[labels] + rng.uniform(-5.0, 5.0, U)
    else:
        tilt = rng.uniform(10.0, 50.0, U)
        azimuth = rng.uniform(90.0, 270.0, U)
    tilt = np.round(tilt, 1)
    azimuth = np.round(azimuth, 1)

    width = len(str(U - 1))
    ids = tuple(f"pv{u:0{width}d}" for u in range(U))
    timestamps = start.astype("datetime64[m]") + np.arange(days * steps) * np.timedelta64(config.resolution, "m")
    table = RawSeriesTable(timestamps, values, ids)
    meta = {
        sid: SystemMetadata(sid, float(capacity[u]), float(tilt[u]), float(azimuth[u]))
        for u, sid in enumerate(ids)
    }
    return table, meta, labels


def write_fleet(table, meta, labels, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "series": out_dir / "series.csv",
        "metadata": out_dir / "metadata.csv",
        "ground_truth": out_dir / "ground_truth.csv",
    }
    write_table(table, paths["series"])
    write_metadata(meta, paths["metadata"])
    with paths["ground_truth"].open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system_id", "group"])
        for sid, g in zip(table.system_ids, labels):
            writer.writerow([sid, int(g)])
    return paths


def load_ground_truth(path) -> dict[str, int]:
    with Path(path).open(newline="") as fh:
        return {rec["system_id"]: int(rec["group"]) for rec in csv.DictReader(fh)}
