"""Dual-stream fusion network producing emotion and cognition embeddings.

Each stream owns one Q-former per modality plus a fusion projection; the
two streams share nothing. Outputs are unit-norm rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .qformer import (
    MODALITIES,
    QFormerDims,
    QFormerParams,
    _uniform,
    init_qformer,
    qformer_forward_batch,
    qformer_stream,
)
from .seeding import rng_for
from .tensor import Tensor

STREAMS = ("emotion", "cognition")


@dataclass(frozen=True)
class ModelDims:
    n_queries: int = 8
    d_q: int = 32
    d_k: int = 32
    d_v: int = 32
    d_e: int = 48
    d_c: int = 48
    d_video: int = 24
    d_audio: int = 24
    d_text: int = 24

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise DimensionError(f"{f.name} must be >= 1")
        for name in ("d_e", "d_c"):
            if getattr(self, name) % 3:
                raise DimensionError(f"{name} must be divisible by 3")

    def feature_dim(self, modality: str) -> int:
        return getattr(self, f"d_{modality}")

    def stream_dim(self, stream: str) -> int:
        return self.d_e if stream == "emotion" else self.d_c

    def qformer_dims(self, stream: str, modality: str) -> QFormerDims:
        return QFormerDims(self.n_queries, self.d_q, self.d_k, self.d_v, self.stream_dim(stream), self.feature_dim(modality))


@dataclass(frozen=True)
class ModalityMask:
    video: bool = True
    audio: bool = True
    text: bool = True

    def __post_init__(self):
        if not (self.video or self.audio or self.text):
            raise ContractError("at least one modality must be enabled")

    @classmethod
    def parse(cls, spec: str) -> "ModalityMask":
        """``"va"`` -> video+audio. Letters v, a, t in any order."""
        letters = set(spec.lower())
        if not letters or letters - set("vat"):
            raise ContractError(f"modality spec {spec!r} must be a non-empty subset of 'vat'")
        return cls("v" in letters, "a" in letters, "t" in letters)

    def enabled(self, modality: str) -> bool:
        return getattr(self, modality)

    def __str__(self) -> str:
        return "".join(m[0] for m in MODALITIES if self.enabled(m))


@dataclass
class FusionParams:
    w3: Tensor  # d x d
    b3: Tensor  # 1 x d


@dataclass
class StreamParams:
    qformers: dict[str, QFormerParams]
    fusion: FusionParams

    def named(self) -> dict[str, Tensor]:
        out = {}
        for m in MODALITIES:
            for k, v in self.qformers[m].named().items():
                out[f"{m}.{k}"] = v
        out["fusion.w3"] = self.fusion.w3
        out["fusion.b3"] = self.fusion.b3
        return out


@dataclass
class BridgeParams:
    emotion: StreamParams
    cognition: StreamParams
    dims: ModelDims = field(default_factory=ModelDims)

    def stream(self, name: str) -> StreamParams:
        return getattr(self, name)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for s in STREAMS:
            for k, v in self.stream(s).named().items():
                out[f"{s}.{k}"] = v
        return out


@dataclass
class BridgeEmbeddings:
    h_e: Tensor  # 1 x d_e
    h_c: Tensor  # 1 x d_c


def init_stream(dims: ModelDims, stream: str, seed: int) -> StreamParams:
    qformers = {m: init_qformer(dims.qformer_dims(stream, m), rng_for(seed, "init", stream, m)) for m in MODALITIES}
    d = dims.stream_dim(stream)
    rng = rng_for(seed, "init", stream, "fusion")
    return StreamParams(qformers, FusionParams(_uniform(rng, d, (d, d)), _uniform(rng, d, (1, d))))


def init_bridge(dims: ModelDims, seed: int) -> BridgeParams:
    return BridgeParams(init_stream(dims, "emotion", seed), init_stream(dims, "cognition", seed), dims)


def fuse_and_pool(z_v: Tensor | None, z_a: Tensor | None, z_t: Tensor | None, fusion: FusionParams,
                  mask: ModalityMask = ModalityMask()) -> Tensor:
    """h = normalize(mean_rows(concat(Z'_v, Z'_a, Z'_t) W_3 + b_3)).

    A masked-out modality (or a ``None`` block) is replaced by zeros of the
    shape its enabled siblings have.
    """
    blocks = dict(zip(MODALITIES, (z_v, z_a, z_t)))
    live = [b for m, b in blocks.items() if mask.enabled(m) and b is not None]
    if not live:
        raise ContractError("all modalities masked")
    shape = live[0].shape
    parts = []
    for m in MODALITIES:
        b = blocks[m]
        if not mask.enabled(m) or b is None:
            parts.append(Tensor(np.zeros(shape)))
        else:
            if b.shape != shape:
                raise DimensionError(f"{m} block has shape {b.shape}, expected {shape}")
            parts.append(b)
    fused = T.add(T.matmul(T.concat_cols(parts), fusion.w3), fusion.b3)
    return T.l2_normalize_rows(T.mean_pool_rows(fused))


def _features(sample, modality: str) -> np.ndarray:
    return getattr(sample, modality)


def stream_forward(sample, params: StreamParams, mask: ModalityMask = ModalityMask()) -> Tensor:
    z = [qformer_stream(Tensor(_features(sample, m)), params.qformers[m]) if mask.enabled(m) else None
         for m in MODALITIES]
    return fuse_and_pool(*z, params.fusion, mask)


def bridge_forward(sample, bridge: BridgeParams, mask: ModalityMask = ModalityMask()) -> BridgeEmbeddings:
    """Per-sample reference path: both streams on one utterance."""
    _check_sample(sample, bridge.dims)
    return BridgeEmbeddings(stream_forward(sample, bridge.emotion, mask), stream_forward(sample, bridge.cognition, mask))


def stream_forward_batch(samples, params: StreamParams, mask: ModalityMask = ModalityMask()) -> Tensor:
    """B x d unit-norm embeddings for one stream over a batch."""
    n_q = params.qformers[MODALITIES[0]].queries.rows
    third = params.fusion.w3.rows // 3
    parts = []
    for m in MODALITIES:
        if mask.enabled(m):
            parts.append(qformer_forward_batch([_features(s, m) for s in samples], params.qformers[m]))
        else:
            parts.append(Tensor(np.zeros((len(samples) * n_q, third))))
    fused = T.add(T.matmul(T.concat_cols(parts), params.fusion.w3), params.fusion.b3)
    return T.l2_normalize_rows(T.mean_pool_row_groups(fused, n_q))


def bridge_forward_batch(samples, bridge: BridgeParams, mask: ModalityMask = ModalityMask()) -> tuple[Tensor, Tensor]:
    """Batched path; row b of each output equals :func:`bridge_forward` on sample b."""
    if not samples:
        raise ContractError("empty batch")
    for s in samples:
        _check_sample(s, bridge.dims)
    return stream_forward_batch(samples, bridge.emotion, mask), stream_forward_batch(samples, bridge.cognition, mask)


def _check_sample(sample, dims: ModelDims) -> None:
    for m in MODALITIES:
        h = _features(sample, m)
        if h.ndim != 2 or h.shape[1] != dims.feature_dim(m):
            raise DimensionError(f"{m} features have shape {h.shape}, expected (T, {dims.feature_dim(m)})")
        if h.shape[0] < 1:
            raise DimensionError(f"{m} sequence is empty")
