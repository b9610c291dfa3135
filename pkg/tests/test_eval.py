import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anticap.eval import (
    Entry,
    bleu,
    cider,
    cider_scores,
    classify_monotonic,
    classify_next_sentence,
    corpus_bleu,
    format_report,
    jaccard_similarity,
    self_retrieval,
    shares_content_word,
    verify_monotonic,
    verify_next_sentence,
)

CANDS = ["a man rides a horse on the beach", "two dogs play in the snow", "a child eats cake"]
REFS = [
    ["a man is riding a horse along the beach", "a person rides a horse"],
    ["two dogs are playing in the snow", "dogs run through snow"],
    ["a little girl eats a piece of cake", "a kid is eating birthday cake"],
]
# per-entry values, computed once by an independent implementation and frozen
CIDER_FIXTURE = [2.5860788618833923, 2.380869579486324, 0.8690692066862649]


def test_bleu_clipped_unigram():
    # "the" may be credited at most once: precision 1/3, brevity penalty 1
    assert bleu("the the the", ["the cat"], 1) == pytest.approx(1 / 3, abs=0)


def test_bleu_brevity_and_exact():
    assert bleu("the cat sat on the mat", ["the cat sat on the mat"], 4) == 1.0
    assert bleu("the cat", ["the cat sat"], 1) == pytest.approx(math.exp(1 - 3 / 2))
    assert bleu("a b c d", ["x y z w"], 1) == 0.0
    # a missing 4-gram zeroes the unsmoothed score
    assert bleu("the cat sat", ["the cat sat"], 4) == 0.0


def test_bleu_reference_length_ties_prefer_shorter():
    # candidate length 3; references of length 2 and 4 tie on distance, the shorter wins so no penalty
    assert bleu("a b c", ["a b", "a b c d"], 1) == 1.0


def test_bleu_errors_and_empty(caplog):
    with pytest.raises(ValueError):
        bleu("a", [], 1)
    with pytest.raises(ValueError):
        bleu("a", ["a"], 5)
    assert bleu("", ["a"], 1) == 0.0


def test_corpus_bleu_pools_counts():
    got = corpus_bleu(["the the the", "cat"], [["the cat"], ["cat"]], 1)
    # matches 1 + 1 over 3 + 1 candidate tokens, lengths 4 vs 3
    assert got == pytest.approx(2 / 4)


def test_cider_fixture():
    got = cider_scores(CANDS, REFS)
    assert np.max(np.abs(np.array(got) - CIDER_FIXTURE)) < 1e-9
    entries = [Entry(str(i), c, r) for i, (c, r) in enumerate(zip(CANDS, REFS))]
    assert cider(entries) == pytest.approx(np.mean(CIDER_FIXTURE), abs=1e-9)


def test_cider_needs_two_entries():
    with pytest.raises(ValueError):
        cider_scores(["a"], [["a"]])


def test_cider_self_reference():
    caps = ["a red car", "the small blue boat"]
    # every n-gram appears in one document out of two, so idf = log 2 everywhere;
    # the 3-word caption has no 4-grams and gets nothing for n = 4
    assert cider_scores(caps, [[c] for c in caps]) == pytest.approx([7.5, 10.0])


def _corpus(n, seed=0):
    rng = np.random.default_rng(seed)
    return [Entry(f"e{i:02d}", f"cap{i}", [], rng.standard_normal(3)) for i in range(n)]


def test_self_retrieval_exact_scorer():
    corpus = _corpus(12)
    lookup = {id(e.target): e.candidate for e in corpus}

    def exact(candidate, target):
        return 1.0 if lookup[id(target)] == candidate else 0.0

    r = self_retrieval(corpus, exact, (1, 5, 10))
    assert r == {1: 1.0, 5: 1.0, 10: 1.0}


def test_self_retrieval_ties_break_by_id():
    corpus = _corpus(4)
    r = self_retrieval(corpus, lambda c, t: 0.0, (1, 2))
    # all tied: only the smallest id ranks first
    assert r[1] == 0.25 and r[2] == 0.5


def test_self_retrieval_clamps_k(caplog):
    r = self_retrieval(_corpus(3), lambda c, t: 0.0, (10,))
    assert r[10] == 1.0 and "clamped" in caplog.text


@given(st.integers(2, 15), st.integers(0, 1000))
def test_recall_monotone_in_k(n, seed):
    corpus = _corpus(n, seed)
    rng = np.random.default_rng(seed)
    table = {(e.candidate, id(t.target)): rng.random() for e in corpus for t in corpus}
    r = self_retrieval(corpus, lambda c, t: table[(c, id(t))], (1, 2, 5, 10))
    vals = [r[k] for k in (1, 2, 5, 10)]
    assert vals == sorted(vals)
    assert all(0.0 <= v <= 1.0 for v in vals)


# (similarity sequence, bucket assigned by hand)
MONOTONIC_CASES = [
    ([0.1, 0.2, 0.3, 0.4], "strict"),
    ([0.0, 0.5], "strict"),
    ([0.1, 0.1, 0.3, 0.4], "one_violation"),
    ([0.4, 0.5, 0.6, 0.2], "one_violation"),
    ([0.3, 0.2, 0.5, 0.9], "one_violation"),
    ([0.5, 0.4, 0.3, 0.2], "non_compliant"),
    ([0.2, 0.2, 0.2, 0.2], "non_compliant"),
    # a single violated pair is both; the one-violation bucket takes precedence
    ([0.9, 0.1], "one_violation"),
    ([0.1, 0.3, 0.2, 0.1], "other"),
    ([0.5, 0.4, 0.6, 0.5], "other"),
    ([0.1, 0.2, 0.3], "strict"),
    ([0.3, 0.3, 0.1], "non_compliant"),
    ([0.1, 0.3, 0.3], "one_violation"),
    ([0.2, 0.1, 0.0, 0.3, 0.4], "other"),
    ([0.0, 0.1, 0.2, 0.3, 0.4, 0.5], "strict"),
    ([0.6, 0.5, 0.4, 0.3, 0.2, 0.1], "non_compliant"),
    ([0.1, 0.2, 0.2, 0.3, 0.4, 0.5], "one_violation"),
    ([0.1, 0.0, 0.2, 0.1, 0.3, 0.2], "other"),
    ([1.0, 1.0], "one_violation"),
    ([0.2, 0.4, 0.3, 0.5], "one_violation"),
]
NSP_CASES = [
    ([True, True, True], "all"),
    ([True, False, True], "one_miss"),
    ([False, False, False], "never"),
    ([False, True, False], "other"),
    ([False], "one_miss"),  # one pair: one miss wins over never
    ([True, True, True, False], "one_miss"),
]


def test_hand_classified_buckets():
    assert len(MONOTONIC_CASES) == 20
    for sims, want in MONOTONIC_CASES:
        assert classify_monotonic(sims) == want, sims
    for flags, want in NSP_CASES:
        assert classify_next_sentence(flags) == want, flags


def test_verify_reports_sum_to_hundred():
    entries = [
        Entry("a", sentences=["red", "red blue", "red blue green", "red blue green"]),
        Entry("b", sentences=["red blue green", "red blue", "red", "red blue green"]),
        Entry("c", sentences=["dog", "cat", "fish", "bird"]),
    ]
    mono = verify_monotonic(entries)
    assert mono["strict"] == pytest.approx(100 / 3)
    assert mono["non_compliant"] == pytest.approx(200 / 3)
    assert sum(mono.values()) == pytest.approx(100.0)
    nsp = verify_next_sentence(entries)
    assert nsp["all"] == pytest.approx(200 / 3) and nsp["never"] == pytest.approx(100 / 3)
    with pytest.raises(ValueError):
        verify_monotonic([Entry("x", sentences=["a", "b"])])


def test_similarities():
    assert jaccard_similarity("a b", "b c") == pytest.approx(1 / 3)
    assert jaccard_similarity("", "") == 1.0
    assert shares_content_word("the dog ran", "a dog sat")
    assert not shares_content_word("the a of", "the a of")


def test_format_report_order_and_precision():
    text = format_report({"b": 0.5, "a": 1}, ["a", "b"])
    assert text == "a\t1\nb\t0.500000\n"
