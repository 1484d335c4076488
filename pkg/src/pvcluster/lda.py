"""Latent Dirichlet Allocation fitted by variational EM.

Documents are handled as word-count vectors; the per-document variational
Dirichlet parameters ``gamma`` are the entity embeddings.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .wording import EntityDocument, documents_to_counts

logger = logging.getLogger(__name__)

TOPIC_WORD_SMOOTHING = 1e-9
E_STEP_MAX_ITER = 100
E_STEP_TOL = 1e-4


@dataclass(frozen=True)
class LdaModel:
    K: int
    alpha: float
    topic_word: np.ndarray  # K x W log-probabilities
    seed: int = 0
    elbo_trace: tuple[float, ...] = ()
    converged: bool = True

    @property
    def W(self) -> int:
        return int(self.topic_word.shape[1])


@dataclass(frozen=True)
class DirichletEmbedding:
    system_id: str
    gamma: np.ndarray
    n_u: int
    converged: bool = True


@dataclass
class _EStepResult:
    gamma: np.ndarray
    phi_sum: np.ndarray = field(repr=False)  # K x W expected topic-word counts
    n_iter: int = 0
    converged: np.ndarray = field(default=None, repr=False)


def _e_step(log_beta, counts, alpha, gamma, tol=E_STEP_TOL, max_iter=E_STEP_MAX_ITER):
    """Coordinate ascent on (phi, gamma) for each document independently.

    Documents whose mean absolute gamma change falls below ``tol`` are
    frozen, so a document's result does not depend on its batch-mates.
    """
    gamma = gamma.copy()
    beta = np.exp(log_beta)
    active = np.ones(len(counts), dtype=bool)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        exp_theta = np.exp(digamma(gamma[rows]))
        norm = exp_theta @ beta
        new = alpha + exp_theta * ((counts[rows] / norm) @ beta.T)
        change = np.abs(new - gamma[rows]).mean(axis=1)
        gamma[rows] = new
        active[rows[change < tol]] = False
    # final sweep so gamma and phi_sum derive from the same phi
    exp_theta = np.exp(digamma(gamma))
    norm = exp_theta @ beta
    gamma = alpha + exp_theta * ((counts / norm) @ beta.T)
    phi_sum = beta * (exp_theta.T @ (counts / norm))
    return _EStepResult(gamma, phi_sum, n_iter, ~active)


def _elbo(log_beta, counts, alpha, gamma):
    """Evidence lower bound at the phi that is optimal for (gamma, beta)."""
    K = gamma.shape[1]
    e_log_theta = digamma(gamma) - digamma(gamma.sum(axis=1, keepdims=True))
    # sum_k phi (E[log theta] + log beta - log phi) collapses to the log normalizer
    log_norm = logsumexp(e_log_theta[:, :, None] + log_beta[None, :, :], axis=1)
    words = (counts * log_norm).sum()
    prior = len(counts) * (gammaln(K * alpha) - K * gammaln(alpha)) + (
        (alpha - 1.0) * e_log_theta
    ).sum()
    entropy = (
        -gammaln(gamma.sum(axis=1)).sum()
        + gammaln(gamma).sum()
        - ((gamma - 1.0) * e_log_theta).sum()
    )
    return float(words + prior + entropy)


def _m_step(phi_sum):
    beta = phi_sum + TOPIC_WORD_SMOOTHING
    return np.log(beta) - np.log(beta.sum(axis=1, keepdims=True))


def _init_gamma(counts, K, alpha):
    return np.repeat(alpha + counts.sum(axis=1, keepdims=True) / K, K, axis=1)


def fit_lda(
    documents: Sequence[EntityDocument] | np.ndarray,
    K: int,
    W: int | None = None,
    alpha: float | None = None,
    seed: int = 0,
    max_em_iter: int = 100,
    tol: float = 1e-6,
) -> LdaModel:
    """Fit LDA with variational EM.

    ``documents`` may be a sequence of :class:`EntityDocument` (then ``W``
    is required) or a D x W count matrix.  ``alpha`` defaults to ``1/K``.
    The E-step is warm-started from the previous gamma, which keeps the
    objective non-decreasing from one EM iteration to the next.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    alpha = 1.0 / K if alpha is None else float(alpha)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if isinstance(documents, np.ndarray):
        counts = np.asarray(documents, dtype=np.float64)
    else:
        if W is None:
            raise ValueError("W is required when passing EntityDocument objects")
        counts = documents_to_counts(documents, W)
    if counts.size == 0 or counts.sum() == 0:
        raise ValueError("corpus is empty")

    rng = np.random.default_rng(seed)
    n_words = counts.shape[1]
    beta0 = rng.gamma(100.0, 0.01, size=(K, n_words))
    log_beta = np.log(beta0) - np.log(beta0.sum(axis=1, keepdims=True))
    gamma = _init_gamma(counts, K, alpha)

    trace: list[float] = []
    converged = False
    for it in range(max_em_iter):
        est = _e_step(log_beta, counts, alpha, gamma)
        gamma = est.gamma
        log_beta = _m_step(est.phi_sum)
        trace.append(_elbo(log_beta, counts, alpha, gamma))
        if it > 0:
            prev = trace[-2]
            if abs(trace[-1] - prev) <= tol * abs(prev):
                converged = True
                break
    if not converged:
        logger.info("LDA stopped after %d EM iterations without meeting tol", max_em_iter)
    return LdaModel(K, alpha, log_beta, seed, tuple(trace), converged)


def infer_gammas(
    model: LdaModel, counts: np.ndarray, tol: float = E_STEP_TOL, max_iter: int = E_STEP_MAX_ITER
) -> tuple[np.ndarray, np.ndarray]:
    """Variational gamma for each row of a count matrix under fixed topics."""
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    if counts.shape[1] != model.W:
        raise ValueError(f"count vectors have {counts.shape[1]} words, model has {model.W}")
    gamma0 = _init_gamma(counts, model.K, model.alpha)
    est = _e_step(model.topic_word, counts, model.alpha, gamma0, tol=tol, max_iter=max_iter)
    return est.gamma, est.converged


def infer_gamma(model: LdaModel, document: EntityDocument, tol: float = E_STEP_TOL) -> DirichletEmbedding:
    words = np.asarray(document.words)
    if words.size and (words.min() < 0 or words.max() >= model.W):
        raise ValueError(f"document {document.system_id} has a word index outside [0, {model.W})")
    gamma, conv = infer_gammas(model, np.bincount(words, minlength=model.W)[None, :], tol=tol)
    if not conv[0]:
        logger.warning("gamma inference for %s hit the iteration cap", document.system_id)
    return DirichletEmbedding(document.system_id, gamma[0], int(words.size), bool(conv[0]))


def embed_documents(model: LdaModel, documents: Sequence[EntityDocument]) -> list[DirichletEmbedding]:
    counts = documents_to_counts(documents, model.W)
    gamma, conv = infer_gammas(model, counts)
    return [
        DirichletEmbedding(doc.system_id, gamma[d], len(doc), bool(conv[d]))
        for d, doc in enumerate(documents)
    ]


def dirichlet_variance(gamma) -> np.ndarray:
    """Marginal variances Var(theta_k) of Dir(gamma)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise ValueError("Dirichlet parameters must be finite and positive")
    g0 = gamma.sum()
    return gamma * (g0 - gamma) / (g0 * g0 * (g0 + 1.0))


# --- persistence -----------------------------------------------------------

def save_embeddings(embeddings: Sequence[DirichletEmbedding], path) -> None:
    K = len(embeddings[0].gamma) if embeddings else 0
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system_id", *[f"gamma_{k + 1}" for k in range(K)], "n_u"])
        for e in embeddings:
            writer.writerow([e.system_id, *[repr(float(g)) for g in e.gamma], e.n_u])


def load_embeddings(path) -> list[DirichletEmbedding]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = len(header) - 2
        for row in reader:
            if row:
                out.append(DirichletEmbedding(row[0], np.array([float(v) for v in row[1:1 + K]]), int(row[-1])))
    return out


def save_model(model: LdaModel, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# K={model.K} W={model.W} alpha={model.alpha!r} seed={model.seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in model.topic_word:
            writer.writerow([repr(float(v)) for v in row])


def load_model(path) -> LdaModel:
    with Path(path).open(newline="") as fh:
        header = fh.readline().lstrip("#").split()
        info = dict(item.split("=", 1) for item in header)
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return LdaModel(int(info["K"]), float(info["alpha"]), np.array(rows), int(info["seed"]))
