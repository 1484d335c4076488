"""Agglomerative clustering on a precomputed distance matrix, and the
angle-based k-means baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ingest import SystemMetadata
from .wording import kmeans

LINKAGES = ("average", "complete")


@dataclass(frozen=True)
class Merge:
    cluster_i: int
    cluster_j: int
    height: float
    new_size: int


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster labels in ``[0, C)``, numbered by each cluster's first member.

    Merge trace cluster ids follow the usual dendrogram convention: the
    ``U`` leaves are ``0..U-1`` and the m-th merge creates id ``U + m``.
    """

    labels: np.ndarray
    C: int
    linkage_tag: str
    merge_trace: tuple[Merge, ...] = ()
    system_ids: tuple[str, ...] = field(default=())

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.C)

    def as_sets(self) -> set[frozenset[int]]:
        return {frozenset(self.members(c).tolist()) for c in range(self.C)}


def canonical_labels(raw: Sequence[int]) -> np.ndarray:
    """Relabel so clusters are numbered in order of their first member."""
    raw = np.asarray(raw)
    mapping: dict[int, int] = {}
    for r in raw.tolist():
        mapping.setdefault(r, len(mapping))
    return np.array([mapping[r] for r in raw.tolist()], dtype=np.int64)


def agglomerate(dist, C: int, linkage_tag: str = "average") -> ClusterAssignment:
    """Merge the closest pair of clusters until ``C`` clusters remain.

    ``dist`` is a square array or a :class:`DistanceMatrix`.  Average
    linkage is size-weighted (UPGMA); complete linkage uses the maximum.
    Inter-cluster distances are kept current with the Lance-Williams
    update.  Ties go to the lexicographically smallest (id_i, id_j).
    """
    ids = tuple(getattr(dist, "system_ids", ()))
    D = np.array(getattr(dist, "values", dist), dtype=np.float64)
    U = D.shape[0]
    if D.shape != (U, U):
        raise ValueError("distance matrix must be square")
    if not 1 <= C <= U:
        raise ValueError(f"cannot cut {U} items into {C} clusters")
    if linkage_tag not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage_tag!r}; choose from {LINKAGES}")
    D = 0.5 * (D + D.T)

    # slot s holds cluster ``cid[s]``; merged clusters reuse the smaller slot
    cid = list(range(U))
    size = [1] * U
    alive = np.ones(U, dtype=bool)
    owner = np.arange(U)
    L = D.copy()
    np.fill_diagonal(L, np.inf)
    trace = []
    next_id = U
    for _ in range(U - C):
        slots = np.flatnonzero(alive)
        sub = L[np.ix_(slots, slots)]
        best = sub.min()
        cand = np.argwhere(sub == best)
        pairs = sorted(
            tuple(sorted((cid[slots[a]], cid[slots[b]]))) + (slots[a], slots[b]) for a, b in cand
        )
        id_i, id_j, s, t = pairs[0]
        if cid[s] != id_i:
            s, t = t, s
        ni, nj = size[s], size[t]
        if linkage_tag == "average":
            merged = (ni * L[s] + nj * L[t]) / (ni + nj)
        else:
            merged = np.maximum(L[s], L[t])
        L[s, :] = merged
        L[:, s] = merged
        L[s, s] = np.inf
        L[t, :] = np.inf
        L[:, t] = np.inf
        alive[t] = False
        owner[owner == t] = s
        size[s] = ni + nj
        trace.append(Merge(id_i, id_j, float(best), ni + nj))
        cid[s] = next_id
        next_id += 1

    labels = canonical_labels(owner)
    return ClusterAssignment(labels, C, linkage_tag, tuple(trace), ids)


def baseline_angle_kmeans(
    meta: Mapping[str, SystemMetadata], C: int, seed: int = 0, system_ids: Sequence[str] | None = None
) -> ClusterAssignment:
    """k-means on (tilt, azimuth) pairs in degrees, azimuth taken as linear."""
    ids = tuple(system_ids) if system_ids is not None else tuple(meta)
    absent = [s for s in ids if s not in meta or meta[s].tilt is None or meta[s].azimuth is None]
    if absent:
        raise ValueError(f"missing tilt/azimuth for: {', '.join(absent)}")
    X = np.array([[meta[s].tilt, meta[s].azimuth] for s in ids], dtype=np.float64)
    if not 1 <= C <= len(ids):
        raise ValueError(f"cannot cut {len(ids)} systems into {C} clusters")
    res = kmeans(X, C, seed=seed)
    return ClusterAssignment(canonical_labels(res.labels), C, "angle_kmeans", (), ids)


def save_assignment(assignment: ClusterAssignment, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system_id", "cluster_label"])
        for sid, lab in zip(assignment.system_ids, assignment.labels):
            writer.writerow([sid, int(lab)])


def load_assignment(path, linkage_tag: str = "unknown") -> ClusterAssignment:
    ids, labels = [], []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            ids.append(rec["system_id"])
            labels.append(int(rec["cluster_label"]))
    labels = np.array(labels, dtype=np.int64)
    return ClusterAssignment(labels, int(labels.max()) + 1, linkage_tag, (), tuple(ids))


def save_merge_trace(assignment: ClusterAssignment, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "height", "new_size"])
        for m in assignment.merge_trace:
            writer.writerow([m.cluster_i, m.cluster_j, repr(m.height), m.new_size])
