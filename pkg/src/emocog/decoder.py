"""A small frozen causal decoder standing in for the language model.

Input layout per sample::

    [<bos>, P_e(h_e), P_c(h_c), prompt..., u_1 .. u_{n-1}]

where ``P_e``/``P_c`` are the trainable prefix bridges that lift the two
embeddings into the decoder width (soft tokens). Logits for target
``u_t`` are read at the position just before it, so the output has one row
per target token.

The block is a single-head causal self-attention with residual, then a
ReLU FFN with residual, then the vocabulary projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import BOS, EOS, PAD, Vocab
from .errors import ContractError, LengthError
from .qformer import _uniform
from .seeding import rng_for
from .tensor import Tensor

N_PREFIX = 3  # <bos>, h_e slot, h_c slot


@dataclass(frozen=True)
class DecoderDims:
    vocab_size: int
    d_model: int = 32
    d_ff: int = 64
    max_len: int = 24


@dataclass
class DecoderParams:
    tok_emb: Tensor  # |V| x d
    pos_emb: Tensor  # L_max x d
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w1: Tensor  # d x d_ff
    b1: Tensor
    w2: Tensor  # d_ff x d
    b2: Tensor
    w_out: Tensor  # d x |V|

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def max_len(self) -> int:
        return self.pos_emb.rows

    @property
    def d_model(self) -> int:
        return self.tok_emb.cols


@dataclass
class PrefixBridge:
    """Trainable maps from the embedding spaces into the decoder width."""

    p_e: Tensor  # d_e x d_model
    p_c: Tensor  # d_c x d_model

    def named(self) -> dict[str, Tensor]:
        return {"p_e": self.p_e, "p_c": self.p_c}


def init_decoder(dims: DecoderDims, seed: int) -> DecoderParams:
    rng = rng_for(seed, "init", "decoder")
    d, f, v = dims.d_model, dims.d_ff, dims.vocab_size
    return DecoderParams(
        tok_emb=Tensor(rng.normal(0.0, 1.0, size=(v, d)), requires_grad=True),
        pos_emb=Tensor(rng.normal(0.0, 0.1, size=(dims.max_len, d)), requires_grad=True),
        w_q=_uniform(rng, d, (d, d)),
        w_k=_uniform(rng, d, (d, d)),
        w_v=_uniform(rng, d, (d, d)),
        w_o=_uniform(rng, d, (d, d)),
        w1=_uniform(rng, d, (d, f)),
        b1=_uniform(rng, d, (1, f)),
        w2=_uniform(rng, f, (f, d)),
        b2=_uniform(rng, f, (1, d)),
        w_out=_uniform(rng, d, (d, v)),
    )


def init_prefix_bridge(d_e: int, d_c: int, d_model: int, seed: int) -> PrefixBridge:
    rng = rng_for(seed, "init", "prefix")
    return PrefixBridge(_uniform(rng, d_e, (d_e, d_model)), _uniform(rng, d_c, (d_c, d_model)))


def _block_causal_mask(batch: int, length: int) -> np.ndarray:
    causal = np.tril(np.ones((length, length), dtype=bool))
    return np.kron(np.eye(batch, dtype=bool), causal)


def decoder_forward_batch(h_e: Tensor, h_c: Tensor, prompt_ids: Sequence[int], targets: Sequence[Sequence[int]],
                          dec: DecoderParams, bridge: PrefixBridge) -> tuple[Tensor, np.ndarray]:
    """Teacher-forced logits for a batch.

    Returns ``(logits, target_ids)`` where ``logits`` is (B * L_t) x |V| and
    ``target_ids`` the matching flat array, right-padded with PAD to the
    longest target L_t.
    """
    b = h_e.rows
    if h_c.rows != b or len(targets) != b:
        raise ContractError("batch sizes of h_e, h_c and targets differ")
    if any(len(t) == 0 for t in targets):
        raise ContractError("targets must be non-empty")
    n_prompt = len(prompt_ids)
    lt = max(len(t) for t in targets)
    length = N_PREFIX + n_prompt + lt - 1
    if length > dec.max_len:
        raise LengthError(f"sequence length {length} exceeds max_len {dec.max_len}")

    tgt = np.full((b, lt), PAD, dtype=np.intp)
    for i, t in enumerate(targets):
        tgt[i, :len(t)] = t
    ids = np.full((b, length), PAD, dtype=np.intp)
    ids[:, 0] = BOS
    ids[:, N_PREFIX:N_PREFIX + n_prompt] = prompt_ids
    ids[:, N_PREFIX + n_prompt:] = tgt[:, :-1]

    tok = T.take_rows(dec.tok_emb, ids.reshape(-1))
    pe = T.matmul(h_e, bridge.p_e)
    pc = T.matmul(h_c, bridge.p_c)
    # route the two soft-token slots of every sample to the projected embeddings
    route = np.arange(b * length)
    route[np.arange(b) * length + 1] = b * length + np.arange(b)
    route[np.arange(b) * length + 2] = b * length + b + np.arange(b)
    x = T.take_rows(T.concat_rows([tok, pe, pc]), route)
    x = T.add(x, T.take_rows(dec.pos_emb, np.tile(np.arange(length), b)))

    q, k, v = T.matmul(x, dec.w_q), T.matmul(x, dec.w_k), T.matmul(x, dec.w_v)
    attn = T.row_softmax(T.matmul(q, T.transpose(k)), scale=1.0 / math.sqrt(dec.d_model), mask=_block_causal_mask(b, length))
    h = T.add(x, T.matmul(T.matmul(attn, v), dec.w_o))
    h = T.add(h, T.add(T.matmul(T.relu(T.add(T.matmul(h, dec.w1), dec.b1)), dec.w2), dec.b2))

    first = N_PREFIX + n_prompt - 1
    rows = (np.arange(b)[:, None] * length + first + np.arange(lt)[None, :]).reshape(-1)
    logits = T.matmul(T.take_rows(h, rows), dec.w_out)
    return logits, tgt.reshape(-1)


def decoder_forward(h_e: Tensor, h_c: Tensor, prompt_ids: Sequence[int], target_ids: Sequence[int],
                    dec: DecoderParams, bridge: PrefixBridge) -> Tensor:
    """Single-sample logits, len(target) x |V|."""
    logits, _ = decoder_forward_batch(h_e, h_c, prompt_ids, [list(target_ids)], dec, bridge)
    return logits


def caption_ce_loss(logits: Tensor, target_ids: Sequence[int]) -> Tensor:
    """Mean token cross-entropy over non-PAD positions."""
    tgt = np.asarray(target_ids, dtype=np.intp).reshape(-1)
    if tgt.size != logits.rows:
        raise ContractError(f"{tgt.size} targets for {logits.rows} logit rows")
    keep = np.flatnonzero(tgt != PAD)
    if keep.size == 0:
        raise ContractError("all target positions are PAD")
    rows = T.take_rows(logits, keep)
    onehot = np.zeros(rows.shape)
    onehot[np.arange(keep.size), tgt[keep]] = 1.0
    nll = T.sub(T.total(T.logsumexp_rows(rows)), T.total(T.mul_const(rows, onehot)))
    return T.scale(nll, 1.0 / keep.size)


def greedy_decode_batch(h_e: Tensor, h_c: Tensor, prompt_ids: Sequence[int], dec: DecoderParams,
                        bridge: PrefixBridge, max_len: int) -> list[list[int]]:
    """Argmax decoding for every row; each output stops at (and includes) EOS."""
    b = h_e.rows
    limit = min(max_len, dec.max_len - N_PREFIX - len(prompt_ids) + 1)
    out: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    with T.no_grad():
        for step in range(limit):
            # last slot is a placeholder: inputs are shifted, so it is never read
            targets = [o + [PAD] for o in out]
            logits, _ = decoder_forward_batch(h_e, h_c, prompt_ids, targets, dec, bridge)
            nxt = logits.data.reshape(b, step + 1, -1)[:, step].argmax(axis=1)
            for i in range(b):
                if not done[i]:
                    out[i].append(int(nxt[i]))
                    done[i] = nxt[i] == EOS
                else:
                    out[i].append(PAD)
            if done.all():
                break
    return [_strip(o) for o in out]


def _strip(ids: list[int]) -> list[int]:
    return ids[:ids.index(EOS) + 1] if EOS in ids else [i for i in ids if i != PAD]


def greedy_decode(h_e: Tensor, h_c: Tensor, prompt_ids: Sequence[int], dec: DecoderParams,
                  bridge: PrefixBridge, max_len: int) -> list[int]:
    return greedy_decode_batch(h_e, h_c, prompt_ids, dec, bridge, max_len)[0]


def token_accuracy(predicted: Sequence[Sequence[int]], gold: Sequence[Sequence[int]]) -> float:
    """Position-wise match rate over gold tokens (EOS included); missing predictions count as wrong."""
    hit = total = 0
    for p, g in zip(predicted, gold, strict=True):
        total += len(g)
        hit += sum(a == b for a, b in zip(p, g))
    return hit / total if total else 0.0


def caption_targets(captions: Sequence[str], vocab: Vocab) -> list[list[int]]:
    return [vocab.encode(c) + [EOS] for c in captions]
