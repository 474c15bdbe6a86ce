import math
import random
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from emocog.errors import ContractError
from emocog.metrics import (UNDEFINED, GroupLabelTable, bleu_n, caption_report, cider, corpus_bleu,
                            embedding_separability, group_proportions, jaccard_similarity_correlation, lcs_length,
                            rouge_l, tokenize)

words = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=9)


def bleu_oracle(cand, ref, n):
    """Single-reference BLEU from explicit clipped counts and the brevity penalty."""
    logs = []
    for k in range(1, n + 1):
        c = Counter(tuple(cand[i:i + k]) for i in range(len(cand) - k + 1))
        r = Counter(tuple(ref[i:i + k]) for i in range(len(ref) - k + 1))
        total = sum(c.values())
        if total == 0:
            continue
        clipped = sum(min(v, r[g]) for g, v in c.items())
        if clipped == 0:
            return 0.0
        logs.append(math.log(clipped / total))
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(sum(logs) / len(logs))


def lcs_dp(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = table[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def test_tokenize():
    assert tokenize("Emotion NEGATIVE. cognition, memory!") == ["emotion", "negative", "cognition", "memory"]


@pytest.mark.parametrize("n", [1, 2, 4])
def test_bleu_identity_and_disjoint(n):
    t = "the patient feels calm today".split()
    assert bleu_n(t, [t], n) == 1.0
    assert bleu_n(t, ["x y z w v".split()], n) == 0.0


def test_bleu_clipping_example():
    cand, ref = "the the the".split(), "the cat".split()
    # clipped unigram precision 1/3; candidate longer than reference, so no brevity penalty
    assert abs(bleu_n(cand, [ref], 1) - 1 / 3) < 1e-10
    assert abs(bleu_n(cand, [ref], 1) - bleu_oracle(cand, ref, 1)) < 1e-10


def test_bleu_brevity_penalty_example():
    cand, ref = "the cat".split(), "the cat sat down".split()
    assert abs(bleu_n(cand, [ref], 1) - math.exp(1 - 4 / 2)) < 1e-12
    assert abs(bleu_n(cand, [ref], 2) - math.exp(1 - 4 / 2)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(words, words, st.sampled_from([1, 2, 4]))
def test_bleu_matches_oracle(cand, ref, n):
    assert abs(bleu_n(cand, [ref], n) - bleu_oracle(cand, ref, n)) < 1e-12


def test_bleu_multi_reference_and_corpus():
    cand = "a b c".split()
    assert bleu_n(cand, [["x"], "a b c".split()], 2) == 1.0
    pairs = [("a b".split(), ["a b".split()]), ("c d e".split(), ["c d f".split()])]
    # corpus unigram: 4 matches / 5, bigram: 2 / 3
    assert abs(corpus_bleu(pairs, 2) - math.sqrt(4 / 5 * 2 / 3)) < 1e-12


def test_bleu_empty_candidate_warns():
    with pytest.warns(UserWarning):
        assert bleu_n([], [["a"]], 1) == 0.0
    with pytest.raises(ContractError):
        bleu_n(["a"], [["a"]], 3 + 2)


def test_rouge_examples():
    assert rouge_l("the cat sat".split(), ["the cat sat".split()]) == 1.0
    assert rouge_l("a b".split(), ["c d".split()]) == 0.0
    p, r = 2 / 3, 1.0
    want = (1 + 1.2) * p * r / (r + 1.2 * p)
    assert lcs_length("the cat sat".split(), "the cat".split()) == 2
    assert abs(rouge_l("the cat sat".split(), ["the cat".split()]) - want) < 1e-10


@settings(max_examples=60, deadline=None)
@given(words, words)
def test_lcs_matches_dp_table(a, b):
    assert lcs_length(a, b) == lcs_dp(a, b)
    assert 0.0 <= rouge_l(a, [b]) <= 1.0


TOY = [
    ("the patient is calm".split(), ["the patient is calm today".split(), "patient is calm".split()]),
    ("memory loss noted".split(), ["memory deficit noted".split()]),
    ("speech is fluent and clear".split(), ["speech fluent".split(), "clear speech is fluent".split()]),
]


def test_cider_matches_bruteforce_oracle():
    mean, per = cider(TOY)
    want_mean, want_per = oracles.cider(TOY)
    assert abs(mean - want_mean) < 1e-10
    assert all(abs(a - b) < 1e-10 for a, b in zip(per, want_per))
    assert all(0.0 <= p <= 1.0 for p in per)


def test_cider_degenerate_and_disjoint():
    t = "a b c".split()
    mean, _ = cider([(t, [t])])
    assert mean == oracles.cider([(t, [t])])[0] == 0.0  # one document: idf = log 1 = 0
    _, per = cider([(t, [t]), ("x y".split(), ["p q".split()])])
    assert per[1] == 0.0
    with pytest.raises(ContractError):
        cider([])


def test_cider_self_pair_scores_highest():
    corpus = [("a b c d".split(), ["a b c d".split()]), ("e f g".split(), ["e f h".split()]),
              ("i j".split(), ["k l".split()])]
    _, per = cider(corpus)
    assert per[0] == max(per) and per[0] > 0.99


def test_caption_report(tmp_path):
    lines = ["emotion negative . cognition memory .", "emotion neutral . cognition none ."]
    rep = caption_report(lines, lines)
    assert rep["bleu1"] == rep["bleu2"] == rep["bleu4"] == rep["rougeL"] == 1.0
    assert rep["n_pairs"] == 2
    rep = caption_report(["aa bb", "cc"], ["xx yy", "zz"])
    assert rep["bleu1"] == rep["bleu4"] == rep["rougeL"] == rep["cider"] == 0.0
    with pytest.raises(ContractError):
        caption_report(["a"], [])


def sep_oracle(emb, labels):
    n = len(emb)
    unit = [np.asarray(e) / np.linalg.norm(e) for e in emb]
    intra, inter = [], []
    for i in range(n):
        for j in range(i + 1, n):
            (intra if labels[i] == labels[j] else inter).append(float(unit[i] @ unit[j]))
    return sum(intra) / len(intra), sum(inter) / len(inter)


def test_separability_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(15, 4))
    labels = rng.integers(-1, 2, size=15).tolist()
    got = embedding_separability(emb, labels)
    intra, inter = sep_oracle(emb.tolist(), labels)
    assert abs(got["intra_cos"] - intra) < 1e-12 and abs(got["inter_cos"] - inter) < 1e-12
    assert abs(got["margin"] - (intra - inter)) < 1e-12
    assert abs(got["silhouette"] - oracles.silhouette_cosine(emb.tolist(), labels)) < 1e-12


def test_separability_ideal_clusters():
    rng = np.random.default_rng(1)
    a = np.array([1.0, 0, 0]) + 1e-3 * rng.normal(size=(10, 3))
    b = np.array([0, 1.0, 0]) + 1e-3 * rng.normal(size=(10, 3))
    got = embedding_separability(np.vstack([a, b]), [0] * 10 + [1] * 10)
    assert abs(got["margin"] - 1) < 1e-3 and got["silhouette"] > 0.99


def test_separability_shuffled_labels_near_zero():
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(300, 6))
    labels = rng.integers(0, 3, size=300)
    assert abs(embedding_separability(emb, labels)["margin"]) < 0.02


def test_separability_singleton_class_and_errors():
    emb = np.eye(3)
    got = embedding_separability(emb, [0, 0, 1])
    assert got["intra_cos"] == 0.0
    with pytest.raises(ContractError):
        embedding_separability(emb, [1, 1, 1])


def test_spearman_indicator_embeddings():
    rng = np.random.default_rng(3)
    sets = rng.integers(1, 16, size=40).tolist()
    emb = np.array([[s >> i & 1 for i in range(4)] for s in sets], dtype=float)
    assert jaccard_similarity_correlation(emb, sets) > 0.9


def test_spearman_undefined_and_random():
    rng = np.random.default_rng(4)
    assert jaccard_similarity_correlation(rng.normal(size=(6, 3)), [5] * 6) == UNDEFINED
    rho = jaccard_similarity_correlation(rng.normal(size=(60, 3)), rng.integers(0, 16, size=60).tolist())
    assert -1.0 <= rho <= 1.0
    with pytest.raises(ContractError):
        jaccard_similarity_correlation(np.eye(2), [1, 2])


def flags(neg=False, *cog):
    return (neg,) + tuple(bool(c) for c in (cog or (0, 0, 0, 0)))


def test_group_proportion_examples():
    one = GroupLabelTable({"s1": "depression"}, [("s1", flags(True)), ("s1", flags()), ("s1", flags(True)),
                                                 ("s1", flags())])
    assert group_proportions(one)["depression"]["negative"] == 0.5
    zero = GroupLabelTable({"s1": "healthy"}, [("s1", flags())] * 3)
    assert set(group_proportions(zero)["healthy"].values()) == {0.0}
    two = GroupLabelTable({"a": "anxiety", "b": "anxiety"},
                          [("a", flags(True)), ("a", flags())] + [("b", flags(True))] + [("b", flags())] * 3)
    # subject-level mean, not pooled utterances (2/6)
    assert group_proportions(two)["anxiety"]["negative"] == 0.375


def test_group_proportions_hand_counts_and_order_invariance():
    subjects = {"d1": "depression", "d2": "depression", "h1": "healthy", "x": "anxiety"}
    utts = [("d1", flags(True, 0, 1, 0, 0)), ("d1", flags(False, 0, 0, 1, 1)), ("d1", flags(True, 1, 0, 0, 0)),
            ("d2", flags(False, 0, 0, 0, 1)), ("h1", flags()), ("h1", flags(False, 0, 1, 0, 0))]
    with pytest.warns(UserWarning, match="'x'"):
        got = group_proportions(GroupLabelTable(subjects, utts))
    assert "anxiety" not in got
    assert got["depression"] == pytest.approx(
        {"negative": (2 / 3 + 0) / 2, "orientation": (1 / 3) / 2, "attention": (1 / 3) / 2,
         "memory": (1 / 3) / 2, "language": (1 / 3 + 1) / 2}, abs=1e-15)
    assert got["healthy"]["attention"] == 0.5
    rnd = random.Random(0)
    for _ in range(5):
        shuffled = utts[:]
        rnd.shuffle(shuffled)
        subj = dict(sorted(subjects.items(), key=lambda kv: rnd.random()))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert group_proportions(GroupLabelTable(subj, shuffled)) == got


def test_group_proportions_errors(tmp_path):
    with pytest.raises(ContractError):
        group_proportions(GroupLabelTable({}, []))
    with pytest.raises(ContractError, match="unknown group"):
        group_proportions(GroupLabelTable({"a": "bipolar"}, []))
    with pytest.raises(ContractError, match="unknown subject"):
        group_proportions(GroupLabelTable({"a": "healthy"}, [("b", flags())]))


def test_group_table_from_json(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('{"subjects": {"a": "healthy"}, "utterances": [{"subject": "a", "negative": 1, "memory": 1}]}')
    table = GroupLabelTable.from_json(p)
    assert table.utterances == [("a", (True, False, False, True, False))]
