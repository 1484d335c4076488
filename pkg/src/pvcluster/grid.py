"""Exhaustive hyperparameter grid with a resumable CSV ledger, and the
cluster-count selection rule."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .agglomerative import agglomerate
from .distance import build_distance_matrix
from .evaluation import DEFAULT_LEVELS, empirical_quantile, format_score, score_clustering
from .ingest import EntityProfileSet, RawSeriesTable, pool_profiles
from .pipeline import embed_profiles
from .wording import Vocabulary, fit_vocabulary

logger = logging.getLogger(__name__)

LEDGER_FIELDS = [
    "setting_id", "C", "K", "W", "metric", "linkage", "seed",
    "valid", "min_cluster_size", "S_disp", "S_sens", "wall_time", "error",
]


@dataclass(frozen=True)
class HyperGrid:
    C_values: tuple[int, ...] = (4, 6, 8, 10, 12, 16)
    K_values: tuple[int, ...] = (3, 5, 8, 12, 20)
    W_values: tuple[int, ...] = (50, 100, 200, 400)
    metrics: tuple[str, ...] = ("sym_kl", "bhattacharyya")
    linkages: tuple[str, ...] = ("average", "complete")
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        for name in ("C_values", "K_values", "W_values", "metrics", "linkages", "seeds"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"grid axis {name} is empty")
            object.__setattr__(self, name, vals)
        for name in ("C_values", "K_values", "W_values"):
            if min(getattr(self, name)) < 2:
                raise ValueError(f"grid axis {name} needs values >= 2")

    def settings(self) -> Iterator["Setting"]:
        # ordered so that cached (W, seed) and (K, W, seed) artifacts are reused
        for seed, W, K, metric, linkage, C in itertools.product(
            self.seeds, self.W_values, self.K_values, self.metrics, self.linkages, self.C_values
        ):
            yield Setting(C, K, W, metric, linkage, seed)

    def __len__(self):
        return (
            len(self.C_values) * len(self.K_values) * len(self.W_values)
            * len(self.metrics) * len(self.linkages) * len(self.seeds)
        )


@dataclass(frozen=True)
class Setting:
    C: int
    K: int
    W: int
    metric: str
    linkage: str
    seed: int

    @property
    def setting_id(self) -> str:
        return f"C={self.C}|K={self.K}|W={self.W}|{self.metric}|{self.linkage}|seed={self.seed}"


@dataclass(frozen=True)
class SettingResult:
    setting: Setting
    S_disp: float | None = None
    S_sens: float | None = None
    valid: bool = False
    min_cluster_size: int = 0
    error: str = ""
    wall_time: float | None = field(default=None, compare=False)


class EmbeddingCache:
    """Vocabularies per (W, seed) and embeddings per (K, W, seed)."""

    def __init__(self, profile_sets: Sequence[EntityProfileSet], alpha=None, **fit_kwargs):
        self.profile_sets = list(profile_sets)
        self.alpha = alpha
        self.fit_kwargs = fit_kwargs
        self._vocab: dict[tuple[int, int], Vocabulary] = {}
        self._emb: dict[tuple[int, int, int], list] = {}

    def vocabulary(self, W: int, seed: int) -> Vocabulary:
        key = (W, seed)
        if key not in self._vocab:
            usable = [p for p in self.profile_sets if not p.excluded]
            self._vocab[key] = fit_vocabulary(
                pool_profiles(usable), W, seed,
                self.fit_kwargs.get("kmeans_max_iter", 300), self.fit_kwargs.get("kmeans_tol", 1e-6),
            )
        return self._vocab[key]

    def embeddings(self, K: int, W: int, seed: int) -> list:
        key = (K, W, seed)
        if key not in self._emb:
            run = embed_profiles(
                self.profile_sets, K, W, self.alpha, seed, vocabulary=self.vocabulary(W, seed),
                lda_max_iter=self.fit_kwargs.get("lda_max_iter", 100),
                lda_tol=self.fit_kwargs.get("lda_tol", 1e-6),
            )
            self._emb[key] = run.embeddings
        return self._emb[key]


def _evaluate_setting(setting, embeddings, norm_table, levels, timing):
    start = time.perf_counter()
    try:
        dist = build_distance_matrix(embeddings, setting.metric)
        assignment = agglomerate(dist, setting.C, setting.linkage)
        min_size = int(assignment.sizes().min())
        if min_size < 2:
            res = SettingResult(setting, valid=False, min_cluster_size=min_size)
        else:
            scores = score_clustering(norm_table, assignment, levels, sensitivity=True)
            res = SettingResult(setting, scores.S_disp, scores.S_sens, True, min_size)
    except Exception as exc:  # recorded per setting; the grid keeps going
        logger.warning("setting %s failed: %s", setting.setting_id, exc)
        res = SettingResult(setting, valid=False, error=f"{type(exc).__name__}: {exc}")
    if timing:
        res = replace(res, wall_time=time.perf_counter() - start)
    return res


def _result_row(res: SettingResult) -> list:
    s = res.setting
    return [
        s.setting_id, s.C, s.K, s.W, s.metric, s.linkage, s.seed,
        int(res.valid), res.min_cluster_size, format_score(res.S_disp), format_score(res.S_sens),
        "" if res.wall_time is None else f"{res.wall_time:.3f}", res.error,
    ]


def _row_result(rec: dict) -> SettingResult:
    setting = Setting(int(rec["C"]), int(rec["K"]), int(rec["W"]), rec["metric"], rec["linkage"], int(rec["seed"]))
    num = lambda v: float(v) if v else None  # noqa: E731
    return SettingResult(
        setting, num(rec["S_disp"]), num(rec["S_sens"]), rec["valid"] == "1",
        int(rec["min_cluster_size"]), rec["error"], num(rec["wall_time"]),
    )


def _drop_partial_tail(path: Path) -> None:
    """Cut an unterminated last line left behind by an interrupted write."""
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])


def read_ledger(path) -> list[SettingResult]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with path.open(newline="") as fh:
        for rec in csv.DictReader(fh):
            if None in rec.values() or None in rec:
                continue
            out.append(_row_result(rec))
    return out


def run_grid(
    norm_table: RawSeriesTable,
    profile_sets: Sequence[EntityProfileSet],
    grid: HyperGrid,
    levels=DEFAULT_LEVELS,
    alpha: float | None = None,
    ledger_path=None,
    jobs: int = 1,
    timing: bool = False,
    cache: EmbeddingCache | None = None,
    **fit_kwargs,
) -> list[SettingResult]:
    """Evaluate every grid point, in grid order.

    With ``ledger_path`` each result is appended as soon as it is known and
    settings already present in the ledger are not recomputed, so an
    interrupted run can be resumed.
    """
    cache = cache or EmbeddingCache(profile_sets, alpha, **fit_kwargs)
    if ledger_path is not None and Path(ledger_path).exists():
        _drop_partial_tail(Path(ledger_path))
    done = {r.setting.setting_id: r for r in read_ledger(ledger_path)} if ledger_path else {}
    todo = [s for s in grid.settings() if s.setting_id not in done]

    fh = writer = None
    if ledger_path is not None:
        ledger_path = Path(ledger_path)
        fresh = not ledger_path.exists()
        fh = ledger_path.open("a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(LEDGER_FIELDS)

    def job(setting):
        try:
            emb = cache.embeddings(setting.K, setting.W, setting.seed)
        except Exception as exc:
            logger.warning("embedding for %s failed: %s", setting.setting_id, exc)
            return SettingResult(setting, valid=False, error=f"{type(exc).__name__}: {exc}")
        return _evaluate_setting(setting, emb, norm_table, levels, timing)

    try:
        if jobs > 1:
            # embeddings are built up front so workers only read the cache
            for s in todo:
                try:
                    cache.embeddings(s.K, s.W, s.seed)
                except Exception:
                    pass
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results_iter = pool.map(job, todo)
                for res in results_iter:
                    done[res.setting.setting_id] = res
                    if writer:
                        writer.writerow(_result_row(res))
                        fh.flush()
        else:
            for s in todo:
                res = job(s)
                done[s.setting_id] = res
                if writer:
                    writer.writerow(_result_row(res))
                    fh.flush()
    finally:
        if fh:
            fh.close()
    return [done[s.setting_id] for s in grid.settings()]


@dataclass(frozen=True)
class CSelection:
    C: int
    n_valid: int
    median_S_disp: float
    median_S_sens: float

    @property
    def objective(self) -> float:
        return self.median_S_disp + abs(self.median_S_disp - self.median_S_sens)


def c_objectives(results: Sequence[SettingResult]) -> list[CSelection]:
    """Per-C medians of the scores, pooled over every other grid axis."""
    by_c: dict[int, list[SettingResult]] = {}
    for r in results:
        if r.valid and r.S_disp is not None and r.S_sens is not None:
            if math.isfinite(r.S_disp) and math.isfinite(r.S_sens):
                by_c.setdefault(r.setting.C, []).append(r)
    return [
        CSelection(
            C, len(rs),
            empirical_quantile([r.S_disp for r in rs], 0.5),
            empirical_quantile([r.S_sens for r in rs], 0.5),
        )
        for C, rs in sorted(by_c.items())
    ]


def select_C(results: Sequence[SettingResult]) -> int:
    """Cluster count minimising median(S_disp) + |median(S_disp) - median(S_sens)|.

    Ties go to the smaller C.
    """
    table = c_objectives(results)
    if not table:
        raise ValueError("no valid grid results to select a cluster count from")
    objectives = np.array([row.objective for row in table])
    return table[int(np.argmin(objectives))].C


def save_selection(results: Sequence[SettingResult], path) -> int:
    table = c_objectives(results)
    chosen = select_C(results)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["C", "n_valid", "median_S_disp", "median_S_sens", "objective", "selected"])
        for row in table:
            writer.writerow([
                row.C, row.n_valid, repr(row.median_S_disp), repr(row.median_S_sens),
                repr(row.objective), int(row.C == chosen),
            ])
    return chosen
