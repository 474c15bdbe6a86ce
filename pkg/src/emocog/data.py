"""Synthetic utterance datasets and the on-disk feature format.

Features stand in for frozen encoder outputs. Each sample carries a latent
emotion centroid and a cognition vector (sum of active category
directions); every modality sees a fixed random linear image of that latent
plus Gaussian noise at each time step.

On disk a dataset is a JSON manifest plus one binary matrix per
(sample, modality)::

    b"ECMF" | u32 version | u32 rows | u32 cols | f64[rows*cols]  (little-endian)

CSV matrices (one row per line, comma-separated) are accepted for small
hand-written fixtures.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .losses import COGNITION_CATEGORIES, EMOTION_LABELS, cognition_mask, cognition_names
from .qformer import MODALITIES
from .seeding import rng_for

ECMF_MAGIC = b"ECMF"
ECMF_VERSION = 1
MANIFEST_SCHEMA = 1
SPLITS = ("train", "val", "test")

# label priors reported for the clinical interview corpus
REPORTED_NEG_RATE = 0.3185
REPORTED_COGNITION_RATES = (0.0091, 0.0854, 0.1038, 0.1589)
# encoder length caps (frames / tokens); text is uncapped
MAX_SEQ_LEN = {"video": 512, "audio": 1024}

EMOTION_WORDS = {-1: "negative", 0: "neutral", 1: "positive"}
TEMPLATES = ("standard", "slots")
SPECIAL_TOKENS = ("<bos>", "<eos>", "<pad>", "<unk>")
BOS, EOS, PAD, UNK = 0, 1, 2, 3
DEFAULT_PROMPT = ("describe", "state")

_EMOTION_LATENT = 3
_COGNITION_LATENT = len(COGNITION_CATEGORIES)


@dataclass
class SyntheticConfig:
    n_samples: int = 600
    seed: int = 0
    noise_std: float = 0.1
    neg_rate: float = REPORTED_NEG_RATE
    cognition_rates: tuple[float, ...] = REPORTED_COGNITION_RATES
    prior_scale: float = 1.0  # multiplies cognition_rates for desk-scale balance
    t_video: tuple[int, int] = (4, 32)
    t_audio: tuple[int, int] = (8, 64)
    t_text: tuple[int, int] = (2, 16)
    d_video: int = 24
    d_audio: int = 24
    d_text: int = 24
    modality_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    template: str = "standard"
    split_sizes: tuple[int, int, int] | None = None  # (train, val, test); None = all train

    def effective_cognition_rates(self) -> tuple[float, ...]:
        return tuple(r * self.prior_scale for r in self.cognition_rates)

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("n_samples", "must be >= 1")
        if not 0.0 <= self.neg_rate <= 1.0:
            raise ConfigError("neg_rate", f"rate {self.neg_rate} outside [0, 1]")
        if len(self.cognition_rates) != len(COGNITION_CATEGORIES):
            raise ConfigError("cognition_rates", "need one rate per category")
        if self.prior_scale < 0:
            raise ConfigError("prior_scale", "must be non-negative")
        for c, r in zip(COGNITION_CATEGORIES, self.effective_cognition_rates()):
            if not 0.0 <= r <= 1.0:
                raise ConfigError("cognition_rates", f"{c} rate {r} outside [0, 1] after scaling")
        if self.noise_std < 0:
            raise ConfigError("noise_std", "must be non-negative")
        for m in MODALITIES:
            lo, hi = getattr(self, f"t_{m}")
            if not 1 <= lo <= hi:
                raise ConfigError(f"t_{m}", f"length range ({lo}, {hi}) invalid")
            if hi > MAX_SEQ_LEN.get(m, hi):
                raise ConfigError(f"t_{m}", f"max length {hi} exceeds cap {MAX_SEQ_LEN[m]}")
            if getattr(self, f"d_{m}") < 1:
                raise ConfigError(f"d_{m}", "must be >= 1")
        if len(self.modality_gain) != 3:
            raise ConfigError("modality_gain", "need three gains (video, audio, text)")
        if self.template not in TEMPLATES:
            raise ConfigError("template", f"unknown template {self.template!r}")
        if self.split_sizes is not None:
            if len(self.split_sizes) != 3 or min(self.split_sizes) < 0 or sum(self.split_sizes) != self.n_samples:
                raise ConfigError("split_sizes", "need three non-negative sizes summing to n_samples")


@dataclass
class UtteranceSample:
    sample_id: str
    video: np.ndarray
    audio: np.ndarray
    text: np.ndarray
    emotion: int
    cognition: int  # 4-bit set
    caption: str
    split: str = "train"

    def features(self, modality: str) -> np.ndarray:
        return getattr(self, modality)


@dataclass
class Dataset:
    samples: list[UtteranceSample]
    feature_dims: dict[str, int]
    template: str = "standard"
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[UtteranceSample]:
        return [s for s in self.samples if s.split == name]

    def split_sizes(self) -> dict[str, int]:
        return {k: sum(s.split == k for s in self.samples) for k in SPLITS}

    def __len__(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# captions and vocabulary


def make_caption(emotion: int, cognition: int, template: str = "standard") -> str:
    word = EMOTION_WORDS[emotion]
    if template == "standard":
        names = cognition_names(cognition) or ["none"]
        return f"emotion {word} . cognition {' '.join(names)} ."
    if template == "slots":
        flags = " ".join(f"{c} {'yes' if cognition >> i & 1 else 'no'}" for i, c in enumerate(COGNITION_CATEGORIES))
        return f"emotion {word} {flags} ."
    raise ConfigError("template", f"unknown template {template!r}")


class Vocab:
    """Token <-> id map. Ids 0..3 are <bos>, <eos>, <pad>, <unk>."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise FormatError("<vocab>", f"first tokens must be {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise FormatError("<vocab>", "duplicate tokens")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.ids.get(t, UNK) for t in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            if i == EOS:
                break
            if i in (BOS, PAD):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        try:
            return cls(lines)
        except FormatError as exc:
            raise FormatError(path, str(exc).split(": ", 1)[-1]) from None


def build_vocab(captions: Sequence[str] = (), prompt: Sequence[str] = DEFAULT_PROMPT, template: str | None = "standard") -> Vocab:
    """Vocabulary covering every caption the template can emit plus the prompt."""
    words = set(prompt)
    for c in captions:
        words.update(c.split())
    if template is not None:
        for e in EMOTION_LABELS:
            for m in range(1 << len(COGNITION_CATEGORIES)):
                words.update(make_caption(e, m, template).split())
    words -= set(SPECIAL_TOKENS)
    return Vocab(list(SPECIAL_TOKENS) + sorted(words))


# ---------------------------------------------------------------------------
# generation


def _structure(cfg: SyntheticConfig):
    """Class centroids, category directions and per-modality maps (seeded)."""
    rng = rng_for(cfg.seed, "data", "structure")
    k = _EMOTION_LATENT + _COGNITION_LATENT
    centroids = {e: np.eye(_EMOTION_LATENT)[i] for i, e in enumerate(EMOTION_LABELS)}
    maps = {m: rng.normal(size=(k, getattr(cfg, f"d_{m}"))) / np.sqrt(k) for m in MODALITIES}
    return centroids, maps


def _latent(centroids, emotion: int, cognition: int) -> np.ndarray:
    cog = np.array([cognition >> i & 1 for i in range(_COGNITION_LATENT)], dtype=np.float64)
    return np.concatenate([centroids[emotion], cog])


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    cfg.validate()
    centroids, maps = _structure(cfg)
    label_rng = rng_for(cfg.seed, "data", "labels")
    rates = np.array(cfg.effective_cognition_rates())
    other = (1.0 - cfg.neg_rate) / 2.0
    emotions = label_rng.choice(np.array(EMOTION_LABELS), size=cfg.n_samples, p=[cfg.neg_rate, other, other])
    cog_bits = label_rng.random((cfg.n_samples, len(rates))) < rates
    cog_masks = (cog_bits * (1 << np.arange(len(rates)))).sum(axis=1)

    if cfg.split_sizes is None:
        splits = ["train"] * cfg.n_samples
    else:
        splits = [name for name, n in zip(SPLITS, cfg.split_sizes) for _ in range(n)]

    samples = []
    for i in range(cfg.n_samples):
        rng = rng_for(cfg.seed, "data", "features", i)
        e, c = int(emotions[i]), int(cog_masks[i])
        z = _latent(centroids, e, c)
        feats = {}
        for gain, m in zip(cfg.modality_gain, MODALITIES):
            lo, hi = getattr(cfg, f"t_{m}")
            steps = int(rng.integers(lo, hi + 1))
            signal = gain * (z @ maps[m])
            feats[m] = signal[None, :] + cfg.noise_std * rng.normal(size=(steps, signal.size))
        samples.append(UtteranceSample(f"s{i:06d}", feats["video"], feats["audio"], feats["text"], e, c,
                                       make_caption(e, c, cfg.template), splits[i]))
    meta = {"generator": asdict(cfg)}
    return Dataset(samples, {m: getattr(cfg, f"d_{m}") for m in MODALITIES}, cfg.template, meta)


def label_rates(samples: Sequence[UtteranceSample]) -> dict[str, float]:
    n = len(samples)
    if n == 0:
        raise ContractError("no samples")
    out = {"negative": sum(s.emotion == -1 for s in samples) / n}
    for i, c in enumerate(COGNITION_CATEGORIES):
        out[c] = sum(s.cognition >> i & 1 for s in samples) / n
    return out


# ---------------------------------------------------------------------------
# matrix files


def encode_matrix(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return ECMF_MAGIC + struct.pack("<III", ECMF_VERSION, *arr.shape) + arr.tobytes()


def write_matrix(path, arr: np.ndarray, fmt: str = "ecmf") -> None:
    path = Path(path)
    if fmt == "ecmf":
        path.write_bytes(encode_matrix(arr))
    elif fmt == "csv":
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in arr) + "\n", encoding="utf-8")
    else:
        raise ConfigError("format", f"unknown matrix format {fmt!r}")


def read_matrix(path, fmt: str = "ecmf") -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(path, f"cannot read matrix file: {exc.strerror}") from exc
    if fmt == "csv":
        return _parse_csv(raw, path)
    if fmt != "ecmf":
        raise ConfigError("format", f"unknown matrix format {fmt!r}")
    if len(raw) < 16:
        raise FormatError(path, "truncated header", len(raw))
    if raw[:4] != ECMF_MAGIC:
        raise FormatError(path, "bad magic, expected ECMF", 0)
    version, rows, cols = struct.unpack_from("<III", raw, 4)
    if version != ECMF_VERSION:
        raise FormatError(path, f"unsupported version {version}", 4)
    need = 16 + rows * cols * 8
    if len(raw) != need:
        what = "truncated" if len(raw) < need else "trailing bytes in"
        raise FormatError(path, f"{what} matrix data: {len(raw)} bytes, expected {need}", min(len(raw), need))
    return np.frombuffer(raw, dtype="<f8", offset=16).reshape(rows, cols).astype(np.float64)


def _parse_csv(raw: bytes, path: Path) -> np.ndarray:
    rows = []
    offset = 0
    for line in raw.decode("utf-8").splitlines(keepends=True):
        text = line.strip()
        if text:
            try:
                rows.append([float(v) for v in text.split(",")])
            except ValueError:
                raise FormatError(path, f"non-numeric CSV field in {text!r}", offset) from None
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(path, "ragged CSV rows", offset)
        offset += len(line.encode("utf-8"))
    if not rows:
        raise FormatError(path, "empty CSV matrix", 0)
    return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# manifest


def save_dataset(dataset: Dataset, out_dir, fmt: str = "ecmf") -> Path:
    """Write manifest.json, one matrix file per (sample, modality), vocab and captions."""
    out = Path(out_dir)
    (out / "matrices").mkdir(parents=True, exist_ok=True)
    ext = "ecmf" if fmt == "ecmf" else "csv"
    entries = []
    for s in dataset.samples:
        paths = {}
        for m in MODALITIES:
            rel = f"matrices/{s.sample_id}_{m}.{ext}"
            write_matrix(out / rel, s.features(m), fmt)
            paths[m] = rel
        entries.append({
            "id": s.sample_id,
            "split": s.split,
            "emotion": s.emotion,
            "cognition": cognition_names(s.cognition),
            "caption": s.caption,
            "features": paths,
        })
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "format": fmt,
        "dims": dataset.feature_dims,
        "template": dataset.template,
        "meta": dataset.meta,
        "samples": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    build_vocab([s.caption for s in dataset.samples], template=dataset.template).save(out / "vocab.txt")
    (out / "captions.txt").write_text("".join(s.caption + "\n" for s in dataset.samples), encoding="utf-8")
    return path


def load_features(manifest_path, fmt: str | None = None) -> Dataset:
    """Parse a manifest and its matrix files, validating dims and labels."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(manifest_path, f"cannot read manifest: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(manifest_path, f"invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
        raise FormatError(manifest_path, f"missing or unsupported schema (expected {MANIFEST_SCHEMA})")
    fmt = fmt or doc.get("format", "ecmf")
    try:
        dims = {m: int(doc["dims"][m]) for m in MODALITIES}
        entries = doc["samples"]
    except (KeyError, TypeError, ValueError):
        raise FormatError(manifest_path, "manifest needs 'dims' for video/audio/text and a 'samples' list") from None

    root = manifest_path.parent
    cache: dict[str, np.ndarray] = {}
    samples = []
    seen = set()
    for k, e in enumerate(entries):
        where = f"sample #{k}"
        try:
            sid = str(e["id"])
            emotion = e["emotion"]
            names = e["cognition"]
            caption = str(e["caption"])
            split = e.get("split", "train")
            paths = e["features"]
        except (KeyError, TypeError):
            raise FormatError(manifest_path, f"{where}: missing field") from None
        if sid in seen:
            raise FormatError(manifest_path, f"{where}: duplicate id {sid!r}")
        seen.add(sid)
        if emotion not in EMOTION_LABELS or isinstance(emotion, bool):
            raise FormatError(manifest_path, f"{where} ({sid}): unknown emotion label {emotion!r}")
        try:
            cog = cognition_mask(names)
        except (ValueError, TypeError):
            raise FormatError(manifest_path, f"{where} ({sid}): unknown cognition label in {names!r}") from None
        if split not in SPLITS:
            raise FormatError(manifest_path, f"{where} ({sid}): unknown split {split!r}")
        feats = {}
        for m in MODALITIES:
            rel = paths.get(m) if isinstance(paths, dict) else None
            if rel is None:
                raise FormatError(manifest_path, f"{where} ({sid}): no {m} matrix")
            if rel not in cache:
                cache[rel] = read_matrix(root / rel, fmt)
            arr = cache[rel]
            if arr.shape[1] != dims[m]:
                raise FormatError(root / rel, f"{m} matrix has {arr.shape[1]} columns, manifest declares {dims[m]}")
            if arr.shape[0] < 1 or arr.shape[0] > MAX_SEQ_LEN.get(m, arr.shape[0]):
                raise FormatError(root / rel, f"{m} sequence length {arr.shape[0]} outside [1, {MAX_SEQ_LEN.get(m)}]")
            feats[m] = arr
        samples.append(UtteranceSample(sid, feats["video"], feats["audio"], feats["text"], int(emotion), cog, caption, split))
    return Dataset(samples, dims, doc.get("template", "standard"), doc.get("meta", {}))


# ---------------------------------------------------------------------------
# batching


def batch_iter(samples: Sequence, batch_size: int, seed: int = 0, shuffle: bool = True, epoch: int = 0) -> list[list]:
    """Split into batches; a trailing batch of one sample joins the previous batch."""
    if batch_size < 2:
        raise ContractError("batch_size must be >= 2 for contrastive training")
    n = len(samples)
    if n < 2:
        raise ContractError(f"need at least 2 samples, got {n}")
    order = rng_for(seed, "batches", epoch).permutation(n) if shuffle else np.arange(n)
    batches = [[samples[i] for i in order[k:k + batch_size]] for k in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    return batches
