"""Stage-1 contrastive objectives.

* emotion: label-matching supervised contrastive loss over three valence
  classes (-1, 0, 1) with an extra log(1 + sum exp) negative term;
* cognition: multi-label variant where positives are weighted by the
  Jaccard index between label sets.

Both are built from tensor primitives so they differentiate back to the
embeddings. Anchors with no positives are skipped in the first term, which
is then averaged over the remaining anchors.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, ParameterError
from .tensor import Tensor

EMOTION_LABELS = (-1, 0, 1)
COGNITION_CATEGORIES = ("orientation", "attention", "memory", "language")


def cognition_mask(names) -> int:
    """Category names -> 4-bit set."""
    m = 0
    for n in names:
        if n not in COGNITION_CATEGORIES:
            raise ValueError(f"unknown cognition category {n!r}")
        m |= 1 << COGNITION_CATEGORIES.index(n)
    return m


def cognition_names(mask: int) -> list[str]:
    return [c for i, c in enumerate(COGNITION_CATEGORIES) if mask >> i & 1]


def similarity_matrix(embeddings: Tensor, tau: float) -> Tensor:
    """S_ij = h_i . h_j / tau."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    return T.scale(T.matmul(embeddings, T.transpose(embeddings)), 1.0 / tau)


def emotion_mask(labels: Sequence[int]) -> np.ndarray:
    """Boolean N x N: same label and i != j."""
    y = np.asarray(labels)
    m = y[:, None] == y[None, :]
    np.fill_diagonal(m, False)
    return m


def jaccard_weights(label_sets: Sequence[int]) -> np.ndarray:
    """Soft positive weights from 4-bit cognition sets.

    Both empty -> 1, exactly one empty -> 0, otherwise |A & B| / |A | B|.
    """
    y = np.asarray(label_sets, dtype=np.int64)
    inter = np.vectorize(_popcount)(y[:, None] & y[None, :])
    union = np.vectorize(_popcount)(y[:, None] | y[None, :])
    both_empty = union == 0
    return np.where(both_empty, 1.0, inter / np.where(both_empty, 1, union))


def _popcount(x: int) -> int:
    return bin(int(x)).count("1")


def _check_batch(embeddings: Tensor, n_labels: int) -> int:
    n = embeddings.rows
    if n < 2:
        raise ContractError(f"contrastive losses need N >= 2, got {n}")
    if n_labels != n:
        raise ContractError(f"{n_labels} labels for {n} embeddings")
    return n


def emotion_contrastive_loss(embeddings: Tensor, labels: Sequence[int], tau: float = 0.1) -> Tensor:
    n = _check_batch(embeddings, len(labels))
    s = similarity_matrix(embeddings, tau)
    offdiag = ~np.eye(n, dtype=bool)
    pos = emotion_mask(labels)
    n_pos = pos.sum(axis=1)
    anchors = np.flatnonzero(n_pos > 0)

    loss = None
    if anchors.size:
        log_denom = T.logsumexp_rows(T.take_rows(s, anchors), offdiag[anchors])
        avg_pos = pos[anchors] / n_pos[anchors, None]
        # mean over positives of log p_ij = mean_j S_ij - log sum_{k!=i} exp S_ik
        pulled = T.sub(T.total(T.mul_const(T.take_rows(s, anchors), avg_pos)), T.total(log_denom))
        loss = T.scale(pulled, -1.0 / anchors.size)
    pushed = T.scale(T.total(T.logsumexp_rows(s, (~pos & offdiag).astype(float), add_one=True)), 1.0 / n)
    return pushed if loss is None else T.add(loss, pushed)


def cognition_contrastive_loss(embeddings: Tensor, label_sets: Sequence[int], tau: float = 0.1) -> Tensor:
    n = _check_batch(embeddings, len(label_sets))
    s = similarity_matrix(embeddings, tau)
    offdiag = (~np.eye(n, dtype=bool)).astype(float)
    w = jaccard_weights(label_sets) * offdiag
    anchors = np.flatnonzero(w.sum(axis=1) > 0)

    loss = None
    if anchors.size:
        s_a = T.take_rows(s, anchors)
        ratio = T.sub(T.logsumexp_rows(s_a, w[anchors]), T.logsumexp_rows(s_a, offdiag[anchors]))
        loss = T.scale(T.total(ratio), -1.0 / anchors.size)
    pushed = T.scale(T.total(T.logsumexp_rows(s, (1.0 - w) * offdiag, add_one=True)), 1.0 / n)
    return pushed if loss is None else T.add(loss, pushed)


def stage1_loss(h_e: Tensor, emotion_labels: Sequence[int], h_c: Tensor, cognition_sets: Sequence[int],
                tau: float = 0.1) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(L1, L_emo, L_cog)`` with L1 = L_emo + L_cog."""
    l_emo = emotion_contrastive_loss(h_e, emotion_labels, tau)
    l_cog = cognition_contrastive_loss(h_c, cognition_sets, tau)
    return T.add(l_emo, l_cog), l_emo, l_cog
