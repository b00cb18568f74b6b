"""Corpus caption metrics: BLEU-1..4, ROUGE-L, CIDEr, METEOR-lite, and
micro-averaged unigram precision/recall.

METEOR here is exact-match only (no stemming or synonym tables) and is
deliberately reported as ``meteor_lite``: its numbers are not comparable to
toolkit METEOR scores. Everything else follows the standard definitions;
CIDEr is reported raw (no x10 scaling), as the mean over n-gram orders of
the average TF-IDF cosine between candidate and references.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .errors import CorpusTooSmall, EmptyCorpus

__all__ = [
    "EvalPair",
    "bleu",
    "rouge_l",
    "cider",
    "meteor_lite",
    "unigram_pr",
    "score_all",
]


@dataclass(frozen=True)
class EvalPair:
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.references:
            raise EmptyCorpus("every pair needs at least one reference")


def make_pairs(candidates: list[list[str]], references: list[list[list[str]]]) -> list[EvalPair]:
    return [
        EvalPair(tuple(c), tuple(tuple(r) for r in refs))
        for c, refs in zip(candidates, references)
    ]


def _ngrams(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------------
# BLEU

def bleu(pairs: list[EvalPair], n: int = 4, sentence_smooth: bool = False) -> float:
    """Corpus BLEU-n: geometric mean of clipped modified precisions for
    orders 1..n times the brevity penalty exp(1 - r/c) when c < r.

    ``sentence_smooth`` is a per-sentence diagnostic mode: each pair is
    scored alone with add-one smoothing on orders >= 2, and the mean is
    returned. Corpus mode applies no smoothing.
    """
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be in 1..4")
    if not pairs:
        raise EmptyCorpus("bleu needs at least one pair")
    if sentence_smooth:
        return sum(_sentence_bleu(p, n) for p in pairs) / len(pairs)

    matched = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        c = len(pair.candidate)
        cand_len += c
        ref_len += min((len(r) for r in pair.references),
                       key=lambda L: (abs(L - c), L))
        for order in range(1, n + 1):
            counts = _ngrams(pair.candidate, order)
            max_ref: Counter = Counter()
            for ref in pair.references:
                for gram, cnt in _ngrams(ref, order).items():
                    max_ref[gram] = max(max_ref[gram], cnt)
            matched[order - 1] += sum(min(cnt, max_ref[g]) for g, cnt in counts.items())
            totals[order - 1] += sum(counts.values())
    if cand_len == 0 or any(t == 0 for t in totals):
        return 0.0
    if any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, totals)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return bp * math.exp(log_p)


def _sentence_bleu(pair: EvalPair, n: int) -> float:
    c = len(pair.candidate)
    if c == 0:
        return 0.0
    log_p = 0.0
    for order in range(1, n + 1):
        counts = _ngrams(pair.candidate, order)
        max_ref: Counter = Counter()
        for ref in pair.references:
            for gram, cnt in _ngrams(ref, order).items():
                max_ref[gram] = max(max_ref[gram], cnt)
        m = sum(min(cnt, max_ref[g]) for g, cnt in counts.items())
        t = sum(counts.values())
        if order >= 2:  # add-one smoothing on higher orders
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / n
    r = min((len(ref) for ref in pair.references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


# --------------------------------------------------------------------------
# ROUGE-L

def _lcs(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(pairs: list[EvalPair], beta2: float = 1.2 ** 2) -> float:
    """Mean per-pair LCS F-score, F = (1 + b^2) P R / (R + b^2 P), with the
    recall-favouring default b = 1.2; best reference per pair."""
    if not pairs:
        raise EmptyCorpus("rouge_l needs at least one pair")
    total = 0.0
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            if not pair.candidate or not ref:
                continue
            lcs = _lcs(pair.candidate, ref)
            if lcs == 0:
                continue
            p = lcs / len(pair.candidate)
            r = lcs / len(ref)
            best = max(best, (1 + beta2) * p * r / (r + beta2 * p))
        total += best
    return total / len(pairs)


# --------------------------------------------------------------------------
# CIDEr

def cider(pairs: list[EvalPair], max_n: int = 4) -> float:
    """Mean over n of the average TF-IDF cosine similarity per pair.

    IDF comes from the reference corpus: log(|corpus| / df) with df floored
    at 1, so n-grams absent from the references get full weight.
    """
    if len(pairs) < 2:
        raise CorpusTooSmall("cider needs at least two pairs for a meaningful IDF")
    corpus_size = len(pairs)
    scores = []
    for order in range(1, max_n + 1):
        df: Counter = Counter()
        for pair in pairs:
            seen = set()
            for ref in pair.references:
                seen.update(_ngrams(ref, order))
            df.update(seen)

        def tfidf(counts: Counter) -> dict:
            return {
                g: cnt * math.log(corpus_size / max(df[g], 1))
                for g, cnt in counts.items()
            }

        def cosine(a: dict, b: dict) -> float:
            na = math.sqrt(sum(v * v for v in a.values()))
            nb = math.sqrt(sum(v * v for v in b.values()))
            if na == 0 or nb == 0:
                return 0.0
            dot = sum(v * b.get(g, 0.0) for g, v in a.items())
            return dot / (na * nb)

        order_total = 0.0
        for pair in pairs:
            cand_vec = tfidf(_ngrams(pair.candidate, order))
            sims = [cosine(cand_vec, tfidf(_ngrams(ref, order))) for ref in pair.references]
            order_total += sum(sims) / len(sims)
        scores.append(order_total / corpus_size)
    return sum(scores) / len(scores)


# --------------------------------------------------------------------------
# METEOR-lite

def _chunked_matches(cand: tuple[str, ...], ref: tuple[str, ...]) -> tuple[int, int]:
    """(matches, chunks) for an exact-unigram alignment.

    Matches are fixed at sum_w min(count_cand, count_ref). The alignment is
    built greedily from the longest common contiguous blocks first (earliest
    position on ties), which keeps the chunk count minimal for template-like
    captions and always realises the full match count.
    """
    cand_free = [True] * len(cand)
    ref_free = [True] * len(ref)
    chunks = 0
    matches = 0
    while True:
        best_len = 0
        best = None
        for i in range(len(cand)):
            for j in range(len(ref)):
                if best_len >= min(len(cand) - i, len(ref) - j):
                    continue  # cannot beat best from here
                k = 0
                while (i + k < len(cand) and j + k < len(ref)
                       and cand_free[i + k] and ref_free[j + k]
                       and cand[i + k] == ref[j + k]):
                    k += 1
                if k > best_len:
                    best_len, best = k, (i, j)
        if best is None or best_len == 0:
            break
        i, j = best
        for k in range(best_len):
            cand_free[i + k] = False
            ref_free[j + k] = False
        matches += best_len
        chunks += 1
    return matches, chunks


def meteor_lite(pairs: list[EvalPair]) -> float:
    """Exact-match METEOR: F_mean = 10PR / (R + 9P), fragmentation penalty
    0.5 * (chunks / matches)^3, score = F_mean * (1 - penalty); zero when
    nothing aligns. Corpus mean of the best per-reference score."""
    if not pairs:
        return 0.0
    total = 0.0
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            if not pair.candidate or not ref:
                continue
            matches, chunks = _chunked_matches(pair.candidate, ref)
            if matches == 0:
                continue
            p = matches / len(pair.candidate)
            r = matches / len(ref)
            f_mean = 10 * p * r / (r + 9 * p)
            penalty = 0.5 * (chunks / matches) ** 3
            best = max(best, f_mean * (1.0 - penalty))
        total += best
    return total / len(pairs)


# --------------------------------------------------------------------------
# unigram precision / recall

def unigram_pr(pairs: list[EvalPair]) -> tuple[float, float]:
    """Micro-averaged clipped unigram precision and recall over the corpus.

    Matched mass per pair is sum_w min(count_cand, count_ref) against the
    best-matching reference; precision divides by candidate tokens, recall
    by reference tokens.
    """
    if not pairs:
        raise EmptyCorpus("unigram_pr needs at least one pair")
    matched = 0
    cand_total = 0
    ref_total = 0
    for pair in pairs:
        cand_counts = Counter(pair.candidate)
        best_m, best_ref = 0, pair.references[0]
        for ref in pair.references:
            m = sum(min(c, Counter(ref)[w]) for w, c in cand_counts.items())
            if m > best_m:
                best_m, best_ref = m, ref
        matched += best_m
        cand_total += len(pair.candidate)
        ref_total += len(best_ref)
    precision = matched / cand_total if cand_total else 0.0
    recall = matched / ref_total if ref_total else 0.0
    return precision, recall


def score_all(pairs: list[EvalPair]) -> dict[str, float]:
    """Every metric in one table (reported in [0, 1]; CIDEr raw)."""
    precision, recall = unigram_pr(pairs)
    table = {
        "bleu_1": bleu(pairs, 1),
        "bleu_2": bleu(pairs, 2),
        "bleu_3": bleu(pairs, 3),
        "bleu_4": bleu(pairs, 4),
        "rouge_l": rouge_l(pairs),
        "meteor_lite": meteor_lite(pairs),
        "precision": precision,
        "recall": recall,
    }
    try:
        table["cider"] = cider(pairs)
    except CorpusTooSmall:
        table["cider"] = float("nan")
    return table
