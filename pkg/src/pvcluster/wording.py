"""Profile vocabulary learned with k-means, and bag-of-words documents."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .ingest import EntityProfileSet


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    inertia_trace: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class Vocabulary:
    centroids: np.ndarray
    rng_seed: int
    inertia: float
    inertia_trace: tuple[float, ...] = ()

    @property
    def W(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def width(self) -> int:
        return int(self.centroids.shape[1])


@dataclass(frozen=True)
class EntityDocument:
    system_id: str
    words: np.ndarray

    def __len__(self):
        return int(self.words.size)

    def counts(self, W: int) -> np.ndarray:
        return np.bincount(self.words, minlength=W)


def _sq_dist(X, C):
    return cdist(X, C, "sqeuclidean")


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; falls back to uniform picks once all mass is zero."""
    M = X.shape[0]
    chosen = [int(rng.integers(M))]
    closest = _sq_dist(X, X[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(M, p=closest / total))
        else:
            free = np.setdiff1d(np.arange(M), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dist(X, X[idx][None, :])[:, 0])
    return X[chosen].copy()


def kmeans(
    X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6
) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Stops once the largest centroid displacement drops below ``tol``.  An
    empty cluster takes over the point currently farthest from its own
    centroid, so exactly ``k`` centroids are always returned.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("k-means needs a non-empty 2-D data matrix")
    M = X.shape[0]
    if k < 1 or M < k:
        raise ValueError(f"cannot fit {k} clusters to {M} points")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(X, k, rng)

    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dist(X, centroids)
        labels = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(M), labels].sum()))

        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centroids)
        np.add.at(new, labels, X)
        filled = counts > 0
        new[filled] /= counts[filled, None]
        if not filled.all():
            own = _sq_dist(X, new)
            own = own[np.arange(M), labels]
            taken = set()
            for j in np.flatnonzero(~filled):
                order = np.argsort(-own, kind="stable")
                idx = next(int(i) for i in order if int(i) not in taken)
                taken.add(idx)
                new[j] = X[idx]
                own[idx] = 0.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break

    d2 = _sq_dist(X, centroids)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(M), labels].sum())
    trace.append(inertia)
    return KMeansResult(centroids, labels, inertia, n_iter, trace)


def fit_vocabulary(
    pooled_profiles: np.ndarray, W: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6
) -> Vocabulary:
    pooled = np.asarray(pooled_profiles, dtype=np.float64)
    if pooled.size == 0:
        raise ValueError("pooled profile set is empty")
    if W < 2:
        raise ValueError("vocabulary needs at least 2 words")
    res = kmeans(pooled, W, seed=seed, max_iter=max_iter, tol=tol)
    return Vocabulary(res.centroids, seed, res.inertia, tuple(res.inertia_trace))


def nearest_word(vocab: Vocabulary, profiles: np.ndarray) -> np.ndarray:
    profiles = np.asarray(profiles, dtype=np.float64)
    if profiles.ndim != 2 or profiles.shape[1] != vocab.width:
        raise ValueError(
            f"profile width {profiles.shape[-1]} does not match vocabulary width {vocab.width}"
        )
    if profiles.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    # argmin returns the first minimum, i.e. the lowest index on ties
    return _sq_dist(profiles, vocab.centroids).argmin(axis=1).astype(np.int64)


def assign_words(vocab: Vocabulary, profiles: EntityProfileSet) -> EntityDocument:
    return EntityDocument(profiles.system_id, nearest_word(vocab, profiles.profiles))


def documents_to_counts(documents: Sequence[EntityDocument], W: int) -> np.ndarray:
    counts = np.zeros((len(documents), W), dtype=np.float64)
    for d, doc in enumerate(documents):
        if doc.words.size and (doc.words.min() < 0 or doc.words.max() >= W):
            raise ValueError(f"document {doc.system_id} has a word index outside [0, {W})")
        counts[d] = np.bincount(doc.words, minlength=W)
    return counts


# --- persistence -----------------------------------------------------------

def save_vocabulary(vocab: Vocabulary, path, extra: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in vocab.centroids:
            writer.writerow([repr(float(v)) for v in row])
    sidecar = {"W": vocab.W, "seed": vocab.rng_seed, "inertia": vocab.inertia}
    sidecar.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_vocabulary(path) -> tuple[Vocabulary, dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    sidecar = json.loads(path.with_suffix(".json").read_text())
    centroids = np.array(rows, dtype=np.float64)
    if centroids.shape[0] != sidecar["W"]:
        raise ValueError(f"vocabulary file has {centroids.shape[0]} rows, sidecar says {sidecar['W']}")
    return Vocabulary(centroids, int(sidecar["seed"]), float(sidecar["inertia"])), sidecar


def save_documents(documents: Sequence[EntityDocument], W: int, path) -> None:
    """Sparse triplets: system_id, word, count (zero counts omitted)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system_id", "word", "count"])
        for doc in documents:
            counts = doc.counts(W)
            for w in np.flatnonzero(counts):
                writer.writerow([doc.system_id, int(w), int(counts[w])])


def load_documents(path, system_ids: Sequence[str]) -> list[EntityDocument]:
    words: dict[str, list[int]] = {s: [] for s in system_ids}
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            words.setdefault(rec["system_id"], []).extend([int(rec["word"])] * int(rec["count"]))
    return [EntityDocument(s, np.array(w, dtype=np.int64)) for s, w in words.items()]
