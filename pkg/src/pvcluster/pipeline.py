"""Glue between the stages: series -> profiles -> words -> gamma -> clusters."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .agglomerative import ClusterAssignment, agglomerate
from .distance import DistanceMatrix, build_distance_matrix
from .evaluation import DEFAULT_LEVELS, ClusterScores, score_clustering
from .ingest import (
    EntityProfileSet,
    RawSeriesTable,
    SystemMetadata,
    build_profiles,
    normalize_by_capacity,
    pool_profiles,
)
from .lda import DirichletEmbedding, LdaModel, embed_documents, fit_lda
from .wording import EntityDocument, Vocabulary, assign_words, fit_vocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingRun:
    vocabulary: Vocabulary
    documents: list[EntityDocument]
    model: LdaModel
    embeddings: list[DirichletEmbedding]
    excluded: tuple[str, ...]


def prepare(
    table: RawSeriesTable,
    meta: Mapping[str, SystemMetadata],
    profile_len: int = 96,
    normalization: str = "capacity",
) -> tuple[RawSeriesTable, list[EntityProfileSet]]:
    norm = normalize_by_capacity(table, meta, normalization)
    return norm, build_profiles(norm, profile_len)


def embed_profiles(
    profile_sets: Sequence[EntityProfileSet],
    K: int,
    W: int,
    alpha: float | None = None,
    seed: int = 0,
    vocabulary: Vocabulary | None = None,
    kmeans_max_iter: int = 300,
    kmeans_tol: float = 1e-6,
    lda_max_iter: int = 100,
    lda_tol: float = 1e-6,
) -> EmbeddingRun:
    """Run wording and LDA; systems without a complete day are left out."""
    usable = [p for p in profile_sets if not p.excluded]
    excluded = tuple(p.system_id for p in profile_sets if p.excluded)
    if excluded:
        logger.warning("excluded from embedding (no complete day): %s", ", ".join(excluded))
    if vocabulary is None:
        vocabulary = fit_vocabulary(pool_profiles(usable), W, seed, kmeans_max_iter, kmeans_tol)
    elif vocabulary.W != W:
        raise ValueError(f"cached vocabulary has {vocabulary.W} words, expected {W}")
    documents = [assign_words(vocabulary, p) for p in usable]
    model = fit_lda(documents, K, W=W, alpha=alpha, seed=seed, max_em_iter=lda_max_iter, tol=lda_tol)
    return EmbeddingRun(vocabulary, documents, model, embed_documents(model, documents), excluded)


def cluster_embeddings(
    embeddings: Sequence[DirichletEmbedding], C: int, metric: str, linkage: str
) -> tuple[DistanceMatrix, ClusterAssignment]:
    dist = build_distance_matrix(embeddings, metric)
    return dist, agglomerate(dist, C, linkage)


def evaluate(
    norm_table: RawSeriesTable,
    assignment: ClusterAssignment,
    levels=DEFAULT_LEVELS,
    sensitivity: bool = True,
) -> ClusterScores:
    return score_clustering(norm_table, assignment, levels, sensitivity)
