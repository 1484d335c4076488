"""Closed-form statistical distances between Dirichlet distributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import digamma, gammaln

METRICS = ("sym_kl", "bhattacharyya")
# comparison-only; discards the uncertainty carried by the concentration
MEAN_EUCLIDEAN = "mean_euclidean"


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim < 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise ValueError("Dirichlet parameters must be positive")
    return a, b


def log_beta_fn(v) -> np.ndarray:
    """Log of the multivariate Beta function along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    return gammaln(v).sum(axis=-1) - gammaln(v.sum(axis=-1))


def _kl(a, b):
    a0 = a.sum(axis=-1)
    b0 = b.sum(axis=-1)
    return (
        gammaln(a0)
        - gammaln(b0)
        - (gammaln(a) - gammaln(b)).sum(axis=-1)
        + ((a - b) * (digamma(a) - digamma(a0)[..., None])).sum(axis=-1)
    )


def _bhattacharyya(a, b):
    m = 0.5 * (a + b)
    return -(log_beta_fn(m) - 0.5 * (log_beta_fn(a) + log_beta_fn(b)))


def kl_dirichlet(a, b) -> float:
    """KL(Dir(a) || Dir(b)); round-off negatives are clipped to 0."""
    a, b = _check_pair(a, b)
    return max(float(_kl(a, b)), 0.0)


def sym_kl(a, b) -> float:
    a, b = _check_pair(a, b)
    return max(0.5 * float(_kl(a, b) + _kl(b, a)), 0.0)


def bhattacharyya(a, b) -> float:
    """Bhattacharyya distance -ln ∫ sqrt(p_a p_b)."""
    a, b = _check_pair(a, b)
    return max(float(_bhattacharyya(a, b)), 0.0)


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    metric_tag: str
    system_ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.system_ids)


def pairwise(gammas: np.ndarray, metric_tag: str) -> np.ndarray:
    G = np.asarray(gammas, dtype=np.float64)
    if G.ndim != 2:
        raise ValueError("expected a U x K matrix of concentrations")
    if metric_tag == MEAN_EUCLIDEAN:
        means = G / G.sum(axis=1, keepdims=True)
        D = np.sqrt(((means[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1))
    else:
        if np.any(~(G > 0)):
            raise ValueError("Dirichlet parameters must be positive")
        A, B = G[:, None, :], G[None, :, :]
        if metric_tag == "sym_kl":
            kl = _kl(np.broadcast_to(A, (len(G),) + G.shape), np.broadcast_to(B, (len(G),) + G.shape))
            D = 0.5 * (kl + kl.T)
        elif metric_tag == "bhattacharyya":
            D = _bhattacharyya(A, B)
            D = 0.5 * (D + D.T)
        else:
            raise ValueError(f"unknown metric {metric_tag!r}; choose from {METRICS}")
    D = np.maximum(D, 0.0)
    np.fill_diagonal(D, 0.0)
    return D


def build_distance_matrix(embeddings: Sequence, metric_tag: str) -> DistanceMatrix:
    """Pairwise distance matrix over ``DirichletEmbedding``-like objects."""
    if not embeddings:
        raise ValueError("no embeddings given")
    Ks = {len(e.gamma) for e in embeddings}
    if len(Ks) != 1:
        raise ValueError(f"embeddings disagree on topic count: {sorted(Ks)}")
    G = np.vstack([e.gamma for e in embeddings])
    ids = tuple(e.system_id for e in embeddings)
    return DistanceMatrix(pairwise(G, metric_tag), metric_tag, ids)


def save_distance_matrix(dist: DistanceMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# metric_tag={dist.metric_tag}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system_id", *dist.system_ids])
        for sid, row in zip(dist.system_ids, dist.values):
            writer.writerow([sid, *[repr(float(v)) for v in row]])


def load_distance_matrix(path) -> DistanceMatrix:
    with Path(path).open(newline="") as fh:
        tag = fh.readline().strip().lstrip("#").strip().split("=", 1)[1]
        reader = csv.reader(fh)
        ids = tuple(next(reader)[1:])
        rows = [[float(v) for v in row[1:]] for row in reader if row]
    return DistanceMatrix(np.array(rows), tag, ids)
