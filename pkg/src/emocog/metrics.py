"""Caption metrics, embedding diagnostics and per-group label statistics.

Tokenisation for all text metrics: lowercase, keep runs of word characters,
drop punctuation and whitespace. Scores are only comparable under this
tokenizer.

CIDEr is reported unscaled (no x10, no length penalty), so every metric here
lies in [0, 1].
"""

from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .errors import ContractError, FormatError
from .losses import COGNITION_CATEGORIES, jaccard_weights

UNDEFINED = "undefined"
GROUPS = ("depression", "anxiety", "healthy")
CATEGORIES = ("negative",) + COGNITION_CATEGORIES
ROUGE_BETA_SQ = 1.2

_TOKEN = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _as_refs(refs) -> list[list[str]]:
    if not refs:
        raise ContractError("at least one reference is required")
    if isinstance(refs[0], str):
        refs = [refs]
    return [list(r) for r in refs]


# ---------------------------------------------------------------------------
# BLEU


def _bleu_stats(cand: Sequence[str], refs: list[list[str]], n: int):
    """Clipped matches and totals per order, candidate length, closest ref length."""
    matches, totals = [], []
    for k in range(1, n + 1):
        c = _ngrams(cand, k)
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= _ngrams(r, k)
        matches.append(sum(min(cnt, max_ref[g]) for g, cnt in c.items()))
        totals.append(max(len(cand) - k + 1, 0))
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return matches, totals, len(cand), ref_len


def _bleu_from_stats(matches, totals, c_len: int, r_len: int) -> float:
    if c_len == 0:
        warnings.warn("empty candidate: BLEU is 0", stacklevel=3)
        return 0.0
    # orders longer than the candidate have no n-grams; they drop out of the mean
    orders = [(m, t) for m, t in zip(matches, totals) if t > 0]
    if any(m == 0 for m, _ in orders):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in orders) / len(orders)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def bleu_n(candidate: Sequence[str], references, n: int = 4) -> float:
    """BLEU-n of one tokenised candidate against one or more references."""
    if n not in (1, 2, 3, 4):
        raise ContractError(f"BLEU order must be 1..4, got {n}")
    return _bleu_from_stats(*_bleu_stats(list(candidate), _as_refs(references), n))


def corpus_bleu(pairs: Sequence[tuple[Sequence[str], list]], n: int = 4) -> float:
    """Corpus-level BLEU: counts and lengths summed over pairs before combining."""
    if not pairs:
        raise ContractError("empty corpus")
    m_tot, t_tot, c_tot, r_tot = [0] * n, [0] * n, 0, 0
    for cand, refs in pairs:
        m, t, c, r = _bleu_stats(list(cand), _as_refs(refs), n)
        m_tot = [a + b for a, b in zip(m_tot, m)]
        t_tot = [a + b for a, b in zip(t_tot, t)]
        c_tot += c
        r_tot += r
    return _bleu_from_stats(m_tot, t_tot, c_tot, r_tot)


# ---------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], references, beta_sq: float = ROUGE_BETA_SQ) -> float:
    """LCS F-measure, best over references."""
    best = 0.0
    for ref in _as_refs(references):
        if not ref:
            raise ContractError("empty reference")
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta_sq) * p * r / (r + beta_sq * p))
    return best


# ---------------------------------------------------------------------------
# CIDEr


def cider(pairs: Sequence[tuple[Sequence[str], list]], max_n: int = 4) -> tuple[float, list[float]]:
    """TF-IDF n-gram cosine, averaged over references and n = 1..max_n.

    Document frequencies come from the reference sets, one document per
    pair. Returns ``(mean, per_pair_scores)``.
    """
    if not pairs:
        raise ContractError("empty corpus")
    refs_all = [_as_refs(r) for _, r in pairs]
    n_docs = len(pairs)
    per_n = []
    for n in range(1, max_n + 1):
        df: Counter = Counter()
        for refs in refs_all:
            df.update(set().union(*(_ngrams(r, n).keys() for r in refs)))

        def vec(tokens):
            return {g: c * math.log(n_docs / max(1.0, df[g])) for g, c in _ngrams(tokens, n).items()}

        scores = []
        for (cand, _), refs in zip(pairs, refs_all):
            cv = vec(list(cand))
            sims = [_cosine(cv, vec(r)) for r in refs]
            scores.append(sum(sims) / len(sims))
        per_n.append(scores)
    per_pair = [float(np.mean(col)) for col in zip(*per_n)]
    return float(np.mean(per_pair)), per_pair


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def caption_report(candidates: Sequence[str], references: Sequence[str]) -> dict:
    """Metric report for aligned candidate/reference lines (one reference each)."""
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ContractError("no caption pairs")
    pairs = [(tokenize(c), [tokenize(r)]) for c, r in zip(candidates, references)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = {f"bleu{n}": corpus_bleu(pairs, n) for n in (1, 2, 4)}
    report["rougeL"] = float(np.mean([rouge_l(c, r) if c else 0.0 for c, r in pairs]))
    report["cider"] = cider(pairs)[0]
    report["n_pairs"] = len(pairs)
    return report


# ---------------------------------------------------------------------------
# embedding diagnostics


def _unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def embedding_separability(embeddings, labels: Sequence) -> dict[str, float]:
    """Intra/inter-class mean pairwise cosine, their difference, cosine silhouette."""
    e = _unit_rows(embeddings)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise ContractError("embedding_separability needs at least two classes")
    cos = e @ e.T
    iu = np.triu_indices(len(y), 1)
    same = (y[:, None] == y[None, :])[iu]
    vals = cos[iu]
    intra = float(vals[same].mean()) if same.any() else float("nan")
    inter = float(vals[~same].mean())
    return {"intra_cos": intra, "inter_cos": inter, "margin": intra - inter, "silhouette": _silhouette(1.0 - cos, y, classes)}


def _silhouette(dist: np.ndarray, y: np.ndarray, classes: np.ndarray) -> float:
    n = len(y)
    member = np.stack([y == c for c in classes], axis=1).astype(float)  # n x K
    sizes = member.sum(axis=0)
    sums = dist @ member  # n x K: total distance from i to each class
    own = member.astype(bool)
    own_size = sizes[own.argmax(axis=1)]
    a = np.where(own_size > 1, sums[own] / np.maximum(own_size - 1, 1), 0.0)
    other = np.where(own, np.inf, sums / sizes)
    b = other.min(axis=1)
    s = np.where(own_size > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-12), 0.0)
    return float(s.mean()) if n else float("nan")


def jaccard_similarity_correlation(embeddings, label_sets: Sequence[int]):
    """Spearman rho between Jaccard weights and embedding cosines over pairs i < j.

    Returns :data:`UNDEFINED` when either side is constant.
    """
    e = _unit_rows(embeddings)
    if len(e) < 3:
        raise ContractError("need at least 3 samples")
    iu = np.triu_indices(len(e), 1)
    w = jaccard_weights(label_sets)[iu]
    c = (e @ e.T)[iu]
    if np.ptp(w) == 0 or np.ptp(c) == 0:
        return UNDEFINED
    return float(spearmanr(w, c).statistic)


# ---------------------------------------------------------------------------
# group statistics


@dataclass
class GroupLabelTable:
    subjects: dict[str, str]  # subject id -> group
    utterances: list[tuple[str, tuple[bool, bool, bool, bool, bool]]]  # (subject, flags in CATEGORIES order)

    @classmethod
    def from_json(cls, path) -> "GroupLabelTable":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(path, f"invalid JSON: {exc.msg}", exc.pos) from None
        try:
            subjects = {str(k): str(v) for k, v in doc["subjects"].items()}
            utts = [(str(u["subject"]), tuple(bool(u.get(c, 0)) for c in CATEGORIES)) for u in doc["utterances"]]
        except (KeyError, TypeError, AttributeError):
            raise FormatError(path, "expected {'subjects': {id: group}, 'utterances': [{subject, flags...}]}") from None
        return cls(subjects, utts)


def group_proportions(table: GroupLabelTable) -> dict[str, dict[str, float]]:
    """Per-subject flag proportions, then an unweighted mean over subjects per group."""
    if not table.subjects:
        raise ContractError("empty table")
    for sid, group in table.subjects.items():
        if group not in GROUPS:
            raise ContractError(f"subject {sid!r} has unknown group {group!r}")
    counts = {sid: np.zeros(len(CATEGORIES)) for sid in table.subjects}
    n_utt = dict.fromkeys(table.subjects, 0)
    for sid, flags in table.utterances:
        if sid not in counts:
            raise ContractError(f"utterance refers to unknown subject {sid!r}")
        counts[sid] += np.asarray(flags, dtype=float)
        n_utt[sid] += 1
    per_group: dict[str, list[np.ndarray]] = {}
    for sid, group in table.subjects.items():
        if n_utt[sid] == 0:
            warnings.warn(f"subject {sid!r} has no utterances; excluded", stacklevel=2)
            continue
        per_group.setdefault(group, []).append(counts[sid] / n_utt[sid])
    # fsum keeps the result independent of subject order
    return {g: {c: math.fsum(r[k] for r in rows) / len(rows) for k, c in enumerate(CATEGORIES)}
            for g, rows in sorted(per_group.items())}


def read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()

