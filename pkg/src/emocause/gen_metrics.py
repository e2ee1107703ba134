"""Self-contained text-generation metrics: BLEU-4, ROUGE-L, METEOR-lite,
CIDEr, and an embedding-based semantic F1 over a pluggable embedder.

Everything here is dependency-free arithmetic over token sequences; the
only seam is the token embedder used by the semantic score. Sentence
metric values live in [0, 1]; CIDEr is corpus-level and non-negative.
"""

from __future__ import annotations

import itertools
import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ContractViolation, InputError

__all__ = [
    "TokenSeq",
    "tokenize",
    "bleu4",
    "rouge_l",
    "meteor_lite",
    "cider",
    "semantic_score",
    "score_corpus",
    "Embedder",
    "OneHotEmbedder",
    "MetricReport",
]

TokenSeq = tuple[str, ...]

# Alignments explored before METEOR chunk minimization falls back to the
# deterministic leftmost pairing (exact minimization is a set-partition
# search; natural sentences stay far below this bound).
METEOR_SEARCH_CAP = 50_000


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> TokenSeq:
    """Lowercase, split on whitespace, strip punctuation off token ends.

    Interior punctuation (apostrophes, hyphens) survives; tokens that are
    all punctuation disappear.
    """
    out = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if end > start:
            out.append(raw[start:end])
    return tuple(out)


def _ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_counts(
    candidate: TokenSeq, references: Sequence[TokenSeq]
) -> tuple[list[int], list[int], int]:
    """Clipped match and total n-gram counts for n = 1..4, plus the
    closest reference length (ties to the shorter reference)."""
    matches, totals = [], []
    for n in range(1, 5):
        cand = _ngram_counts(candidate, n)
        best = Counter()
        for ref in references:
            for gram, cnt in _ngram_counts(ref, n).items():
                if cnt > best[gram]:
                    best[gram] = cnt
        matches.append(sum(min(cnt, best[gram]) for gram, cnt in cand.items()))
        totals.append(max(len(candidate) - n + 1, 0))
    c = len(candidate)
    closest = min((abs(len(r) - c), len(r)) for r in references)[1]
    return matches, totals, closest


def _bleu_from_counts(
    matches: Sequence[int], totals: Sequence[int], cand_len: int, ref_len: int
) -> float:
    if cand_len == 0 or matches[0] == 0:
        return 0.0
    if any(m == 0 for m in matches):
        # Add-one smoothing on the higher orders only, and only when needed.
        precisions = [matches[0] / totals[0]] + [
            (matches[n] + 1) / (totals[n] + 1) for n in range(1, 4)
        ]
    else:
        precisions = [matches[n] / totals[n] for n in range(4)]
    log_mean = sum(math.log(p) for p in precisions) / 4.0
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_mean)


def bleu4(candidate: TokenSeq, references: Sequence[TokenSeq]) -> float:
    """Sentence BLEU-4: geometric mean of clipped n-gram precisions times
    the brevity penalty ``exp(1 - r/c)`` for candidates shorter than the
    closest reference."""
    if not references:
        raise ContractViolation("bleu4 needs at least one reference")
    if not candidate:
        return 0.0
    matches, totals, closest = _bleu_counts(candidate, references)
    return _bleu_from_counts(matches, totals, len(candidate), closest)


def _lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok_a in a:
        cur = [0]
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(cur[j - 1], prev[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: TokenSeq, reference: TokenSeq) -> float:
    """F-measure of the longest common subsequence."""
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2.0 * p * r / (p + r)


def _positions(tokens: TokenSeq) -> dict[str, list[int]]:
    pos: dict[str, list[int]] = {}
    for i, tok in enumerate(tokens):
        pos.setdefault(tok, []).append(i)
    return pos


def _count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    ordered = sorted(pairs)
    chunks = 0
    prev = None
    for ci, ri in ordered:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def _align(candidate: TokenSeq, reference: TokenSeq) -> tuple[int, int]:
    """Exact-match alignment: maximum matches, then minimum chunks.

    Returns ``(matches, chunks)``. The match count is forced (per shared
    token, min of the two occurrence counts); chunk minimization
    enumerates occurrence assignments exhaustively up to
    ``METEOR_SEARCH_CAP`` combinations and falls back to the leftmost
    order-preserving assignment past it.
    """
    cand_pos = _positions(candidate)
    ref_pos = _positions(reference)
    shared = sorted(set(cand_pos) & set(ref_pos))
    matches = sum(min(len(cand_pos[t]), len(ref_pos[t])) for t in shared)
    if matches == 0:
        return 0, 0

    per_token: list[list[tuple[tuple[int, int], ...]]] = []
    total = 1
    for tok in shared:
        pc, pr = cand_pos[tok], ref_pos[tok]
        k = min(len(pc), len(pr))
        options = [
            tuple(zip(chosen_c, chosen_r))
            for chosen_c in itertools.combinations(pc, k)
            for chosen_r in itertools.permutations(pr, k)
        ]
        total *= len(options)
        per_token.append(options)
        if total > METEOR_SEARCH_CAP:
            break

    if total <= METEOR_SEARCH_CAP:
        best = None
        for combo in itertools.product(*per_token):
            pairs = [p for option in combo for p in option]
            chunks = _count_chunks(pairs)
            if best is None or chunks < best:
                best = chunks
                if best == 1:
                    break
        return matches, int(best)

    pairs = []
    for tok in shared:
        pc, pr = cand_pos[tok], ref_pos[tok]
        k = min(len(pc), len(pr))
        pairs.extend(zip(pc[:k], pr[:k]))
    return matches, _count_chunks(pairs)


def meteor_lite(candidate: TokenSeq, reference: TokenSeq) -> float:
    """Exact-match METEOR with the classical parameters (10, 0.5, 3).

    ``Fmean = 10PR / (R + 9P)`` discounted by the fragmentation penalty
    ``0.5 * (chunks / matches)^3``. No stemming or synonymy.
    """
    if not candidate or not reference:
        return 0.0
    matches, chunks = _align(candidate, reference)
    if matches == 0:
        return 0.0
    p = matches / len(candidate)
    r = matches / len(reference)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


def cider(
    candidates: Sequence[TokenSeq],
    references: Sequence[Sequence[TokenSeq]],
) -> float:
    """Corpus CIDEr: mean over n = 1..4 of the average cosine similarity
    between tf-idf n-gram vectors of each candidate and its references,
    idf taken over the reference corpus, scaled by 10."""
    if len(candidates) != len(references) or not candidates:
        raise ContractViolation(
            f"{len(candidates)} candidates vs {len(references)} reference sets"
        )
    n_docs = len(references)
    doc_freq: list[Counter] = [Counter() for _ in range(4)]
    for refs in references:
        for n in range(1, 5):
            seen = set()
            for ref in refs:
                seen.update(_ngram_counts(ref, n))
            for gram in seen:
                doc_freq[n - 1][gram] += 1

    def tfidf(tokens: TokenSeq, n: int) -> dict:
        return {
            gram: cnt * (math.log(n_docs) - math.log(max(1, doc_freq[n - 1][gram])))
            for gram, cnt in _ngram_counts(tokens, n).items()
        }

    def cosine(u: dict, v: dict) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(x * v[g] for g, x in u.items() if g in v)
        return dot / (nu * nv)

    total = 0.0
    for cand, refs in zip(candidates, references):
        per_n = []
        for n in range(1, 5):
            vec_c = tfidf(cand, n)
            sims = [cosine(vec_c, tfidf(ref, n)) for ref in refs]
            per_n.append(sum(sims) / len(sims) if sims else 0.0)
        total += 10.0 * sum(per_n) / 4.0
    return total / len(candidates)


class Embedder(Protocol):
    """Maps a token to a fixed-width unit-norm vector."""

    width: int

    def embed(self, token: str) -> np.ndarray: ...


class OneHotEmbedder:
    """Exactly orthogonal reference embedder.

    Each distinct token gets the next free axis of a fixed-width space on
    first sight, so cosine similarity is 1 for equal tokens and 0
    otherwise. Raises once the vocabulary outgrows the width.
    """

    def __init__(self, width: int = 4096):
        if width < 1:
            raise ContractViolation("embedder width must be >= 1")
        self.width = width
        self._index: dict[str, int] = {}

    def embed(self, token: str) -> np.ndarray:
        idx = self._index.get(token)
        if idx is None:
            if len(self._index) >= self.width:
                raise ContractViolation(
                    f"one-hot vocabulary exceeded width {self.width}"
                )
            idx = len(self._index)
            self._index[token] = idx
        vec = np.zeros(self.width)
        vec[idx] = 1.0
        return vec


def semantic_score(
    candidate: TokenSeq, reference: TokenSeq, embedder: Embedder
) -> float:
    """Greedy-matching F1 over token embeddings.

    Recall averages, over reference tokens, the best cosine against any
    candidate token; precision is symmetric; the result is clamped to
    [0, 1]. Either side empty scores 0.
    """
    if not candidate or not reference:
        return 0.0
    cand = np.stack([embedder.embed(t) for t in candidate])
    ref = np.stack([embedder.embed(t) for t in reference])
    cn = np.linalg.norm(cand, axis=1)
    rn = np.linalg.norm(ref, axis=1)
    cn[cn == 0.0] = 1.0
    rn[rn == 0.0] = 1.0
    sims = (ref / rn[:, None]) @ (cand / cn[:, None]).T
    r = float(sims.max(axis=1).mean())
    p = float(sims.max(axis=0).mean())
    if p + r <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, 2.0 * p * r / (p + r))))


@dataclass
class MetricReport:
    """Per-sample and corpus-level scores, JSON-serializable."""

    per_sample: list[dict]
    corpus: dict
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus,
            "counts": self.counts,
            "per_sample": self.per_sample,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)


def score_corpus(pairs: Sequence[dict], embedder: Embedder) -> MetricReport:
    """Score id-aligned candidate/reference text pairs.

    Sentence metrics (bleu4, rouge_l, meteor_lite, semantic) are reported
    per sample; the corpus block pools BLEU n-gram counts, macro-averages
    the other sentence metrics, and adds corpus-level CIDEr.
    """
    if not pairs:
        raise InputError("no pairs to score")
    seen = set()
    for pair in pairs:
        if pair["id"] in seen:
            raise InputError(f"duplicate id {pair['id']!r}")
        seen.add(pair["id"])

    per_sample = []
    pooled_m = [0, 0, 0, 0]
    pooled_t = [0, 0, 0, 0]
    pooled_c = 0
    pooled_r = 0
    cands, refs = [], []
    for pair in pairs:
        cand = tokenize(pair["candidate"])
        ref = tokenize(pair["reference"])
        cands.append(cand)
        refs.append([ref])
        if cand:
            matches, totals, closest = _bleu_counts(cand, [ref])
            sample_bleu = _bleu_from_counts(matches, totals, len(cand), closest)
            for n in range(4):
                pooled_m[n] += matches[n]
                pooled_t[n] += totals[n]
            pooled_c += len(cand)
            pooled_r += closest
        else:
            sample_bleu = 0.0
            pooled_r += len(ref)
        per_sample.append(
            {
                "id": pair["id"],
                "bleu4": sample_bleu,
                "rouge_l": rouge_l(cand, ref),
                "meteor_lite": meteor_lite(cand, ref),
                "semantic": semantic_score(cand, ref, embedder),
            }
        )

    n = len(per_sample)
    corpus = {
        "bleu4": _bleu_from_counts(pooled_m, pooled_t, pooled_c, pooled_r),
        "rouge_l": sum(s["rouge_l"] for s in per_sample) / n,
        "meteor_lite": sum(s["meteor_lite"] for s in per_sample) / n,
        "semantic": sum(s["semantic"] for s in per_sample) / n,
        "cider": cider(cands, refs),
    }
    return MetricReport(per_sample, corpus, {"samples": n})
