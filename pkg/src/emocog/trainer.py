"""AdamW and the two-stage training procedure.

Stage 1 fits both fusion streams with the contrastive objectives; stage 2
fits the streams plus the prefix bridges with caption cross-entropy through
a frozen, pre-trained decoder. Parameters outside a stage's trainable groups
are never touched.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .bridgenet import BridgeParams, ModalityMask, bridge_forward_batch
from .data import Vocab, batch_iter
from .decoder import DecoderParams, PrefixBridge, caption_ce_loss, caption_targets, decoder_forward_batch
from .errors import ConfigError, DivergenceError, NumericalError
from .losses import stage1_loss
from .seeding import rng_for
from .tensor import Tensor

log = logging.getLogger(__name__)

GROUPS = ("bridgenet-emotion", "bridgenet-cognition", "prefix-bridges", "decoder")
DIVERGENCE_LIMIT = 1e6


class AdamW:
    """Adam with decoupled weight decay.

    The bias-corrected Adam step is applied first, then ``p -= lr * wd * p``.
    Parameters whose ``grad`` is None this step are skipped entirely.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr <= 0 or eps <= 0 or weight_decay < 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ConfigError("optimizer", "invalid AdamW hyperparameters")
        self.params = dict(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        T.zero_grad(self.params.values())


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    tau: float = 0.1
    seed: int = 0
    shuffle: bool = True
    modalities: str = "vat"

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be non-negative")
        if self.tau <= 0:
            raise ConfigError("tau", "must be positive")
        try:
            ModalityMask.parse(self.modalities)
        except ValueError as exc:
            raise ConfigError("modalities", str(exc)) from None

    @property
    def mask(self) -> ModalityMask:
        return ModalityMask.parse(self.modalities)


# desk-scale defaults vs. the reported full-scale setup
PRESETS = {
    "desk": TrainConfig(epochs=200, batch_size=16, lr=1e-3, weight_decay=1e-6),
    "paper-faithful": TrainConfig(epochs=500, batch_size=64, lr=1.3e-5, weight_decay=1e-6),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


@dataclass
class Model:
    """All parameter groups of the encoder-decoder, tagged by group."""

    bridge: BridgeParams
    prefix: PrefixBridge
    decoder: DecoderParams

    def groups(self) -> dict[str, dict[str, Tensor]]:
        named = self.bridge.named_parameters()
        return {
            "bridgenet-emotion": {k: v for k, v in named.items() if k.startswith("emotion.")},
            "bridgenet-cognition": {k: v for k, v in named.items() if k.startswith("cognition.")},
            "prefix-bridges": {f"prefix.{k}": v for k, v in self.prefix.named().items()},
            "decoder": {f"decoder.{k}": v for k, v in self.decoder.named().items()},
        }

    def parameters(self, groups: Sequence[str] = GROUPS) -> dict[str, Tensor]:
        all_groups = self.groups()
        out = {}
        for g in groups:
            out.update(all_groups[g])
        return out


def group_digest(params: Mapping[str, Tensor]) -> str:
    """SHA-256 over names and raw bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


@dataclass
class TrainState:
    model: Model
    stage: int
    trainable: tuple[str, ...]
    optimizer: AdamW
    seed: int
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def frozen(self) -> tuple[str, ...]:
        return tuple(g for g in GROUPS if g not in self.trainable)

    def digests(self) -> dict[str, str]:
        return {g: group_digest(p) for g, p in self.model.groups().items()}


STAGE_GROUPS = {
    1: ("bridgenet-emotion", "bridgenet-cognition"),
    2: ("bridgenet-emotion", "bridgenet-cognition", "prefix-bridges"),
}


def _new_state(model: Model, stage: int, cfg: TrainConfig) -> TrainState:
    trainable = STAGE_GROUPS[stage]
    opt = AdamW(model.parameters(trainable), cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    for name, p in model.parameters().items():
        p.requires_grad = name in opt.params
    return TrainState(model, stage, trainable, opt, cfg.seed)


def _guard(value: float, stage: int, epoch: int) -> None:
    if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise DivergenceError(f"stage {stage} loss diverged ({value}) in epoch {epoch}")


def _stage1_batch(batch, model: Model, cfg: TrainConfig):
    h_e, h_c = bridge_forward_batch(batch, model.bridge, cfg.mask)
    return stage1_loss(h_e, [s.emotion for s in batch], h_c, [s.cognition for s in batch], cfg.tau)


def train_stage1(samples: Sequence, model: Model, cfg: TrainConfig) -> TrainState:
    """Contrastive training of both streams.

    ``history`` starts with an epoch-0 row evaluated at initialisation on the
    first epoch's batches, then one row per epoch with batch-mean losses.
    """
    cfg.validate()
    state = _new_state(model, 1, cfg)
    with T.no_grad():
        rows = [_stage1_batch(b, model, cfg) for b in batch_iter(samples, cfg.batch_size, cfg.seed, cfg.shuffle, 1)]
    state.history.append(_stage1_row(0, rows))
    for epoch in range(1, cfg.epochs + 1):
        rows = []
        for batch in batch_iter(samples, cfg.batch_size, cfg.seed, cfg.shuffle, epoch):
            state.optimizer.zero_grad()
            l1, l_emo, l_cog = _stage1_batch(batch, model, cfg)
            _guard(l1.item(), 1, epoch)
            T.backward(l1)
            state.optimizer.step()
            rows.append((l1, l_emo, l_cog))
        state.epoch = epoch
        state.history.append(_stage1_row(epoch, rows))
        log.debug("stage1 epoch %d L1=%.5f", epoch, state.history[-1]["L1"])
    state.optimizer.zero_grad()
    return state


def _stage1_row(epoch: int, rows) -> dict:
    l1, le, lc = (float(np.mean([r[i].item() for r in rows])) for i in range(3))
    return {"epoch": epoch, "L_emo": le, "L_cog": lc, "L1": l1}


def _stage2_batch(batch, model: Model, vocab: Vocab, prompt_ids, cfg: TrainConfig):
    h_e, h_c = bridge_forward_batch(batch, model.bridge, cfg.mask)
    logits, tgt = decoder_forward_batch(h_e, h_c, prompt_ids, caption_targets([s.caption for s in batch], vocab),
                                        model.decoder, model.prefix)
    return caption_ce_loss(logits, tgt)


def train_stage2(samples: Sequence, model: Model, vocab: Vocab, prompt: Sequence[str], cfg: TrainConfig) -> TrainState:
    """Caption cross-entropy through the frozen decoder; trains streams + prefix bridges."""
    cfg.validate()
    prompt_ids = vocab.encode(" ".join(prompt))
    state = _new_state(model, 2, cfg)
    with T.no_grad():
        first = [_stage2_batch(b, model, vocab, prompt_ids, cfg).item()
                 for b in batch_iter(samples, cfg.batch_size, cfg.seed, cfg.shuffle, 1)]
    state.history.append({"epoch": 0, "L2": float(np.mean(first))})
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in batch_iter(samples, cfg.batch_size, cfg.seed, cfg.shuffle, epoch):
            state.optimizer.zero_grad()
            loss = _stage2_batch(batch, model, vocab, prompt_ids, cfg)
            _guard(loss.item(), 2, epoch)
            T.backward(loss)
            state.optimizer.step()
            losses.append(loss.item())
        state.epoch = epoch
        state.history.append({"epoch": epoch, "L2": float(np.mean(losses))})
        log.debug("stage2 epoch %d L2=%.5f", epoch, state.history[-1]["L2"])
    state.optimizer.zero_grad()
    return state


def pretrain_decoder(captions: Sequence[str], vocab: Vocab, decoder: DecoderParams, prefix: PrefixBridge,
                     prompt: Sequence[str], epochs: int = 60, batch_size: int = 32, lr: float = 3e-3,
                     seed: int = 0) -> list[float]:
    """Language-model pretraining on captions alone.

    The two embedding slots receive fresh random unit vectors every step
    (passed through the current, untouched prefix bridges), so the decoder
    learns the caption distribution without any label signal.
    """
    if epochs < 0:
        raise ConfigError("epochs", "must be >= 0")
    prompt_ids = vocab.encode(" ".join(prompt))
    targets = caption_targets(captions, vocab)
    for p in prefix.named().values():
        p.requires_grad = False
    params = {f"decoder.{k}": v for k, v in decoder.named().items()}
    for p in params.values():
        p.requires_grad = True
    opt = AdamW(params, lr=lr)
    d_e, d_c = prefix.p_e.rows, prefix.p_c.rows
    curve = []
    for epoch in range(1, epochs + 1):
        rng = rng_for(seed, "pretrain", epoch)
        losses = []
        for batch in batch_iter(list(range(len(targets))), batch_size, seed, True, epoch):
            opt.zero_grad()
            h_e = T.l2_normalize_rows(Tensor(rng.normal(size=(len(batch), d_e))))
            h_c = T.l2_normalize_rows(Tensor(rng.normal(size=(len(batch), d_c))))
            logits, tgt = decoder_forward_batch(h_e, h_c, prompt_ids, [targets[i] for i in batch], decoder, prefix)
            loss = caption_ce_loss(logits, tgt)
            _guard(loss.item(), 0, epoch)
            T.backward(loss)
            opt.step()
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    opt.zero_grad()
    for p in params.values():
        p.requires_grad = False
    return curve

