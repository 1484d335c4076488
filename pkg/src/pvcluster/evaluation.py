"""Quantile summaries of clusters and the pinball-loss based cluster scores.

Series keep their gaps here: quantiles at a timestep use whichever members
are observed there, and the pinball average runs only over pairs where
both the series value and the summary are defined.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.05, 0.10, 0.25, 0.40, 0.50, 0.60, 0.75, 0.90, 0.95)


class SingletonClusterError(ValueError):
    """Leave-one-out scoring needs every cluster to have two or more members."""


def check_levels(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64).ravel()
    if levels.size == 0 or np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("quantile levels must be strictly increasing")
    return levels


def empirical_quantile(values, q: float) -> float:
    """Linear interpolation between order statistics.

    With sorted values v_1..v_m and h = (m-1)q + 1 the result is
    v_floor(h) + (h - floor(h)) (v_ceil(h) - v_floor(h)).  Returns NaN for an
    empty input.
    """
    v = sorted(float(x) for x in values)
    if not v:
        return math.nan
    h = (len(v) - 1) * q + 1
    lo, hi = math.floor(h), math.ceil(h)
    return v[lo - 1] + (h - lo) * (v[hi - 1] - v[lo - 1])


def _quantiles_from_sorted(S, n, levels, skip=None):
    """Per-column quantiles of a member x T matrix already sorted along axis 0.

    ``n`` counts usable (finite) entries per column; NaNs sort last.  When
    ``skip`` is given, the entry at sorted position ``skip[t]`` of column t
    is treated as removed.
    """
    T = S.shape[1]
    h = (np.maximum(n, 1)[:, None] - 1) * levels[None, :]
    lo = np.floor(h).astype(np.int64)
    hi = np.ceil(h).astype(np.int64)
    frac = h - lo
    if skip is not None:
        lo = lo + (lo >= skip[:, None])
        hi = hi + (hi >= skip[:, None])
    cols = S.T
    a = np.take_along_axis(cols, np.minimum(lo, S.shape[0] - 1), axis=1)
    b = np.take_along_axis(cols, np.minimum(hi, S.shape[0] - 1), axis=1)
    out = a + frac * (b - a)
    out[n == 0] = np.nan
    # guards against one-ulp crossings between adjacent levels
    return np.maximum.accumulate(out, axis=1) if T else out


@dataclass(frozen=True)
class QuantileSummary:
    values: np.ndarray  # T x Q, NaN rows where no member is observed
    quantile_levels: np.ndarray
    cluster_label: int
    coverage: np.ndarray  # observed members per timestep

    def column(self, q: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.quantile_levels, q))
        if idx.size == 0:
            raise KeyError(f"level {q} not in summary levels {self.quantile_levels.tolist()}")
        return self.values[:, idx[0]]


def summarize_cluster(members, levels=DEFAULT_LEVELS, cluster_label: int = 0) -> QuantileSummary:
    """Quantile summary of a member x T matrix of (possibly gappy) series."""
    X = np.atleast_2d(np.asarray(members, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("cannot summarize an empty cluster")
    levels = check_levels(levels)
    coverage = (~np.isnan(X)).sum(axis=0)
    S = np.sort(X, axis=0)
    return QuantileSummary(_quantiles_from_sorted(S, coverage, levels), levels, cluster_label, coverage)


def pinball(x, y, q):
    d = x - y
    return np.maximum(q * d, (q - 1.0) * d)


def quantile_score(x, Y, levels=None) -> float:
    """Mean pinball loss of series ``x`` against a T x Q quantile matrix.

    ``Y`` may be a :class:`QuantileSummary` (levels taken from it).  Pairs
    where ``x`` or the summary is undefined are skipped and the mean is over
    the remaining pairs; NaN if none remain.
    """
    if isinstance(Y, QuantileSummary):
        levels, Y = Y.quantile_levels, Y.values
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape != (x.size, levels.size):
        raise ValueError(f"summary shape {Y.shape} does not match series length {x.size} and {levels.size} levels")
    loss = pinball(x[:, None], Y, levels[None, :])
    valid = ~np.isnan(loss)
    if not valid.any():
        return math.nan
    return float(loss[valid].sum() / valid.sum())


@dataclass(frozen=True)
class ClusterScores:
    S_disp: float
    S_sens: float | None
    disp_per_system: np.ndarray
    sens_per_system: np.ndarray | None
    excluded: tuple[str, ...] = ()


def _rows_for(table, assignment) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    values = np.asarray(getattr(table, "values", table), dtype=np.float64)
    ids = tuple(getattr(assignment, "system_ids", ()) or ())
    if ids and hasattr(table, "index_of"):
        values = values[[table.index_of(s) for s in ids]]
    labels = np.asarray(getattr(assignment, "labels", assignment))
    if labels.shape[0] != values.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {values.shape[0]} series")
    if not ids:
        ids = tuple(str(i) for i in range(len(labels)))
    return values, labels, ids


def member_scores(values, labels, levels=DEFAULT_LEVELS, leave_one_out: bool = False) -> np.ndarray:
    """Per-series quantile score against its cluster summary.

    With ``leave_one_out`` each series is scored against the summary of its
    cluster without itself.  That summary is obtained by skipping the
    series' own position in the sorted cluster columns, which gives the same
    order statistics as re-sorting the reduced cluster.
    """
    levels = check_levels(levels)
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    out = np.full(len(labels), np.nan)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        X = values[idx]
        if leave_one_out and len(idx) < 2:
            raise SingletonClusterError(
                f"cluster {int(c)} has fewer than two members; leave-one-out sensitivity is undefined"
            )
        order = np.argsort(X, axis=0, kind="stable")
        S = np.take_along_axis(X, order, axis=0)
        observed = ~np.isnan(X)
        n = observed.sum(axis=0)
        if not leave_one_out:
            Y = _quantiles_from_sorted(S, n, levels)
        pos = np.empty_like(order)
        np.put_along_axis(pos, order, np.arange(len(idx))[:, None].repeat(X.shape[1], axis=1), axis=0)
        for r, u in enumerate(idx):
            if leave_one_out:
                Y = _quantiles_from_sorted(S, n - observed[r], levels, skip=pos[r])
            out[u] = quantile_score(X[r], Y, levels)
    return out


def _mean_with_report(scores, ids, what):
    bad = tuple(s for s, v in zip(ids, scores) if np.isnan(v))
    if bad:
        logger.warning("%s: %d system(s) without scoreable pairs excluded: %s", what, len(bad), ", ".join(bad))
    if len(bad) == len(ids):
        return math.nan, bad
    return float(np.nanmean(scores)), bad


def dispersion_score(table, assignment, levels=DEFAULT_LEVELS) -> float:
    values, labels, ids = _rows_for(table, assignment)
    return _mean_with_report(member_scores(values, labels, levels), ids, "dispersion")[0]


def sensitivity_score(table, assignment, levels=DEFAULT_LEVELS) -> float:
    values, labels, ids = _rows_for(table, assignment)
    return _mean_with_report(member_scores(values, labels, levels, True), ids, "sensitivity")[0]


def score_clustering(table, assignment, levels=DEFAULT_LEVELS, sensitivity: bool = True) -> ClusterScores:
    values, labels, ids = _rows_for(table, assignment)
    disp = member_scores(values, labels, levels)
    S_disp, bad = _mean_with_report(disp, ids, "dispersion")
    sens = S_sens = None
    if sensitivity:
        sens = member_scores(values, labels, levels, True)
        S_sens, bad_s = _mean_with_report(sens, ids, "sensitivity")
        bad = tuple(sorted(set(bad) | set(bad_s)))
    return ClusterScores(S_disp, S_sens, disp, sens, bad)


def cluster_summaries(table, assignment, levels=DEFAULT_LEVELS) -> list[QuantileSummary]:
    values, labels, _ = _rows_for(table, assignment)
    return [summarize_cluster(values[labels == c], levels, int(c)) for c in range(int(labels.max()) + 1)]


def save_summary(summary: QuantileSummary, timestamps, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *[f"q{q:g}" for q in summary.quantile_levels], "coverage"])
        for stamp, row, cov in zip(timestamps, summary.values, summary.coverage):
            writer.writerow([
                str(np.datetime_as_string(np.datetime64(stamp, "m"), unit="m")),
                *["" if math.isnan(v) else repr(float(v)) for v in row],
                int(cov),
            ])


def format_score(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def save_scores(rows: Sequence[tuple[str, float, float | None]], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["setting_id", "S_disp", "S_sens"])
        for sid, d, s in rows:
            writer.writerow([sid, format_score(d), format_score(s)])
