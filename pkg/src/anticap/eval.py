"""Caption metrics (BLEU, CIDEr-D, self-retrieval) and dataset-verification statistics."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

STOPWORDS = frozenset(
    "a an the and or of to in on at for with is are was were be been it its this that "
    "they he she we i you his her their our my there then".split()
)


@dataclass
class Entry:
    id: str
    candidate: str = ""
    references: list[str] = field(default_factory=list)
    target: np.ndarray | None = None
    sentences: list[str] | None = None


def _tokens(x) -> list[str]:
    return x.lower().split() if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_stats(cand, refs, max_n):
    matches, totals = [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        c = ngrams(cand, n)
        clip = Counter()
        for r in refs:
            clip |= ngrams(r, n)
        matches[n - 1] = sum(min(cnt, clip[g]) for g, cnt in c.items())
        totals[n - 1] = max(len(cand) - n + 1, 0)
    # closest reference length, shorter one on ties
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return matches, totals, len(cand), ref_len


def _combine(matches, totals, cand_len, ref_len) -> float:
    if cand_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def bleu(candidate, references, n: int = 4) -> float:
    """Sentence BLEU-n without smoothing: any zero n-gram precision gives 0."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    cand = _tokens(candidate)
    refs = [_tokens(r) for r in references]
    if not refs:
        raise ValueError("BLEU needs at least one reference")
    if not cand:
        log.warning("empty candidate scores BLEU 0")
        return 0.0
    return _combine(*_bleu_stats(cand, refs, n))


def corpus_bleu(candidates, references_list, n: int = 4) -> float:
    """Corpus BLEU-n: clipped counts and lengths are pooled before combining."""
    M, T = [0] * n, [0] * n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references_list):
        m, t, cl, rl = _bleu_stats(_tokens(cand), [_tokens(r) for r in refs], n)
        M = [a + b for a, b in zip(M, m)]
        T = [a + b for a, b in zip(T, t)]
        c_len += cl
        r_len += rl
    return _combine(M, T, c_len, r_len)


def _count_vec(counts: Counter, df: Counter, log_n: float, max_n: int):
    vec = [dict() for _ in range(max_n)]
    norm = [0.0] * max_n
    for g, tf in counts.items():
        k = len(g) - 1
        w = tf * (log_n - math.log(max(1.0, df[g])))
        vec[k][g] = w
        norm[k] += w * w
    return vec, [math.sqrt(x) for x in norm]


def cider_scores(candidates, references_list, max_n: int = 4, sigma: float = 6.0) -> list[float]:
    """Per-entry CIDEr-D: clipped TF-IDF cosine per n, length penalty, x10."""
    if len(candidates) < 2:
        raise ValueError("CIDEr needs at least two entries to estimate document frequency")
    cands = [_tokens(c) for c in candidates]
    refs = [[_tokens(r) for r in rs] for rs in references_list]

    def counts(toks):
        c = Counter()
        for n in range(1, max_n + 1):
            c.update(ngrams(toks, n))
        return c

    ref_counts = [[counts(r) for r in rs] for rs in refs]
    df = Counter()
    for rcs in ref_counts:
        df.update({g for rc in rcs for g in rc})
    log_n = math.log(len(cands))

    scores = []
    for cand, rcs, rs in zip(cands, ref_counts, refs):
        vc, nc = _count_vec(counts(cand), df, log_n, max_n)
        total = np.zeros(max_n)
        for rc, r in zip(rcs, rs):
            vr, nr = _count_vec(rc, df, log_n, max_n)
            delta = len(cand) - len(r)
            for k in range(max_n):
                val = sum(min(w, vr[k].get(g, 0.0)) * vr[k].get(g, 0.0) for g, w in vc[k].items())
                if nc[k] != 0 and nr[k] != 0:
                    val /= nc[k] * nr[k]
                total[k] += val * math.exp(-(delta**2) / (2 * sigma**2))
        scores.append(10.0 * float(np.mean(total)) / len(rs))
    return scores


def cider(corpus: Sequence[Entry], max_n: int = 4) -> float:
    s = cider_scores([e.candidate for e in corpus], [e.references for e in corpus], max_n)
    return float(np.mean(s))


def self_retrieval(corpus: Sequence[Entry], scorer: Callable, K_list=(1, 5, 10)) -> dict[int, float]:
    """Fraction of entries whose own target ranks in the top K for its caption.

    Targets are sorted by descending score; equal scores fall back to id order.
    """
    n = len(corpus)
    if n == 0:
        raise ValueError("empty corpus")
    ids = [e.id for e in corpus]
    if len(set(ids)) != n:
        raise ValueError("entry ids must be unique")
    order = np.argsort(np.array(ids), kind="stable")
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[order] = np.arange(n)
    ranks = []
    for i, e in enumerate(corpus):
        scores = np.array([scorer(e.candidate, t.target) for t in corpus], dtype=np.float64)
        better = np.sum(scores > scores[i])
        tied_before = np.sum((scores == scores[i]) & (id_rank < id_rank[i]))
        ranks.append(int(better + tied_before))
    ranks = np.array(ranks)
    out = {}
    for K in K_list:
        if K > n:
            log.warning("R@%d clamped to corpus size %d", K, n)
        out[K] = float(np.mean(ranks < min(K, n)))
    return out


def jaccard_similarity(a: str, b: str) -> float:
    ta, tb = set(_tokens(a)), set(_tokens(b))
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def shares_content_word(a: str, b: str) -> bool:
    return bool((set(_tokens(a)) - STOPWORDS) & (set(_tokens(b)) - STOPWORDS))


MONOTONIC_FIELDS = ("strict", "one_violation", "non_compliant", "other")
NEXT_SENTENCE_FIELDS = ("all", "one_miss", "never", "other")


def classify_monotonic(sims: Sequence[float]) -> str:
    """Bucket a similarity sequence by its count of non-increasing adjacent pairs.

    Precedence: strict, then exactly one violation, then all pairs violate.
    """
    if len(sims) < 2:
        raise ValueError("need at least two similarities")
    v = sum(1 for a, b in zip(sims, sims[1:]) if not a < b)
    if v == 0:
        return "strict"
    if v == 1:
        return "one_violation"
    if v == len(sims) - 1:
        return "non_compliant"
    return "other"


def classify_next_sentence(flags: Sequence[bool]) -> str:
    misses = sum(1 for f in flags if not f)
    if misses == 0:
        return "all"
    if misses == 1:
        return "one_miss"
    if misses == len(flags):
        return "never"
    return "other"


def _percentages(labels, fields) -> dict[str, float]:
    c = Counter(labels)
    n = max(len(labels), 1)
    return {f: 100.0 * c[f] / n for f in fields}


def verify_monotonic(corpus: Sequence[Entry], sim: Callable = jaccard_similarity) -> dict[str, float]:
    """Percent of entries whose sim(last sentence, C_i) rises with i, and the failure buckets."""
    labels = []
    for e in corpus:
        if not e.sentences or len(e.sentences) < 3:
            raise ValueError(f"entry {e.id}: need at least 2 context sentences and a final one")
        *context, last = e.sentences
        labels.append(classify_monotonic([sim(last, c) for c in context]))
    return _percentages(labels, MONOTONIC_FIELDS)


def verify_next_sentence(corpus: Sequence[Entry], nsp: Callable = shares_content_word) -> dict[str, float]:
    labels = []
    for e in corpus:
        if not e.sentences or len(e.sentences) < 2:
            raise ValueError(f"entry {e.id}: need a sentence sequence of length >= 2")
        s = e.sentences
        labels.append(classify_next_sentence([bool(nsp(a, b)) for a, b in zip(s, s[1:])]))
    return _percentages(labels, NEXT_SENTENCE_FIELDS)


def format_report(values: dict, fields: Sequence[str] | None = None) -> str:
    """Fixed-order ``key<TAB>value`` lines, floats to six decimals."""
    out = []
    for k in fields or values:
        v = values[k]
        out.append(f"{k}\t{v:.6f}" if isinstance(v, float) else f"{k}\t{v}")
    return "\n".join(out) + "\n"
