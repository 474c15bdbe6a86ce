"""One query-transformer stream for a single modality.

Learnable queries self-attend, cross-attend to the projected modality
sequence, then pass through a two-layer feed-forward map. Single head, one
block, no residuals or layer norm.

Two entry points compute the same function:

* :func:`qformer_forward` runs one sample at a time and is the reference.
* :func:`qformer_forward_batch` stacks the time steps of many samples and
  uses segment-wise softmax/matmul, which is what training uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

MODALITIES = ("video", "audio", "text")


@dataclass(frozen=True)
class QFormerDims:
    n_queries: int = 8  # l_q
    d_q: int = 32
    d_k: int = 32
    d_v: int = 32
    d_out: int = 48  # d_e (or d_c); the FFN emits d_out // 3 columns
    d_in: int = 24  # d_m, modality feature width

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise DimensionError(f"{f.name} must be >= 1")
        if self.d_out % 3:
            raise DimensionError(f"d_out={self.d_out} must be divisible by 3")


@dataclass
class QFormerParams:
    queries: Tensor  # l_q x d_q
    w_q: Tensor  # d_q x d_k   (self-attention)
    w_k: Tensor  # d_q x d_k
    w_v: Tensor  # d_q x d_v
    w_m: Tensor  # d_m x d_q   (modality projection)
    w_cq: Tensor  # d_v x d_k  (cross-attention)
    w_ck: Tensor  # d_q x d_k
    w_cv: Tensor  # d_q x d_v
    w1: Tensor  # d_v x d_out
    b1: Tensor  # 1 x d_out
    w2: Tensor  # d_out x d_out/3
    b2: Tensor  # 1 x d_out/3

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def d_k(self) -> int:
        return self.w_q.cols


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_qformer(dims: QFormerDims, rng: np.random.Generator) -> QFormerParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
    d = dims
    third = d.d_out // 3
    return QFormerParams(
        queries=_uniform(rng, d.d_q, (d.n_queries, d.d_q)),
        w_q=_uniform(rng, d.d_q, (d.d_q, d.d_k)),
        w_k=_uniform(rng, d.d_q, (d.d_q, d.d_k)),
        w_v=_uniform(rng, d.d_q, (d.d_q, d.d_v)),
        w_m=_uniform(rng, d.d_in, (d.d_in, d.d_q)),
        w_cq=_uniform(rng, d.d_v, (d.d_v, d.d_k)),
        w_ck=_uniform(rng, d.d_q, (d.d_q, d.d_k)),
        w_cv=_uniform(rng, d.d_q, (d.d_q, d.d_v)),
        w1=_uniform(rng, d.d_v, (d.d_v, d.d_out)),
        b1=_uniform(rng, d.d_v, (1, d.d_out)),
        w2=_uniform(rng, d.d_out, (d.d_out, third)),
        b2=_uniform(rng, d.d_out, (1, third)),
    )


def modality_project(features: Tensor, params: QFormerParams) -> Tensor:
    """H' = H W_m."""
    if features.cols != params.w_m.rows:
        raise DimensionError(f"features have {features.cols} columns, projection expects {params.w_m.rows}")
    return T.matmul(features, params.w_m)


def query_self_attention(params: QFormerParams) -> Tensor:
    q = params.queries
    scores = T.matmul(T.matmul(q, params.w_q), T.transpose(T.matmul(q, params.w_k)))
    attn = T.row_softmax(scores, scale=1.0 / math.sqrt(params.d_k))
    return T.matmul(attn, T.matmul(q, params.w_v))


def query_cross_attention(queries: Tensor, projected: Tensor, params: QFormerParams) -> Tensor:
    """Z = softmax(Q' W'_q (H' W'_k)^T / sqrt(d_k)) H' W'_v."""
    if projected.rows == 0:
        raise DimensionError("empty sequence: T_m must be >= 1")
    if queries.cols != params.w_cq.rows or projected.cols != params.w_ck.rows:
        raise DimensionError("cross-attention operand widths do not match the parameters")
    keys = T.matmul(projected, params.w_ck)
    scores = T.matmul(T.matmul(queries, params.w_cq), T.transpose(keys))
    attn = T.row_softmax(scores, scale=1.0 / math.sqrt(params.d_k))
    return T.matmul(attn, T.matmul(projected, params.w_cv))


def query_ffn(z: Tensor, params: QFormerParams) -> Tensor:
    if z.cols != params.w1.rows:
        raise DimensionError(f"ffn input has {z.cols} columns, expected {params.w1.rows}")
    hidden = T.relu(T.add(T.matmul(z, params.w1), params.b1))
    return T.add(T.matmul(hidden, params.w2), params.b2)


def qformer_stream(features: Tensor, params: QFormerParams) -> Tensor:
    """Project -> self-attend -> cross-attend -> FFN for one modality of one sample."""
    projected = modality_project(features, params)
    return query_ffn(query_cross_attention(query_self_attention(params), projected, params), params)


def qformer_forward(h_v: Tensor, h_a: Tensor, h_t: Tensor, params: dict[str, QFormerParams]):
    """Per-modality outputs ``(Z'_v, Z'_a, Z'_t)``, each l_q x d_out/3."""
    return tuple(qformer_stream(h, params[m]) for h, m in zip((h_v, h_a, h_t), MODALITIES))


def qformer_forward_batch(sequences: list[np.ndarray], params: QFormerParams) -> Tensor:
    """Run one modality's stream over a batch of variable-length sequences.

    Returns a (B * l_q) x d_out/3 tensor; rows ``[b*l_q, (b+1)*l_q)`` belong
    to sample ``b``. The query self-attention does not depend on the input,
    so it is computed once per batch.
    """
    lengths = [s.shape[0] for s in sequences]
    if min(lengths, default=0) < 1:
        raise DimensionError("empty sequence: T_m must be >= 1")
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    stacked = Tensor(np.concatenate(sequences, axis=0))
    projected = modality_project(stacked, params)
    keys = T.matmul(projected, params.w_ck)
    values = T.matmul(projected, params.w_cv)
    q = T.matmul(query_self_attention(params), params.w_cq)
    attn = T.segment_row_softmax(T.matmul(q, T.transpose(keys)), bounds, scale=1.0 / math.sqrt(params.d_k))
    return query_ffn(T.segment_matmul(attn, values, bounds), params)
