"""ROUGE-1/2/L, novel n-gram abstractivity, and the LEAD / EXT-ORACLE baselines.

Tokenization for every metric: lowercase, then Unicode word tokens (``\\w+``);
punctuation is dropped and nothing is stemmed. ROUGE-L treats each text as a
single token sequence (no per-sentence union LCS).
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .corpus import Document

_WORD = re.compile(r"\w+")

NOVEL_NS = (1, 2, 3, 4)


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    empty_reference: bool = False

    @classmethod
    def from_counts(cls, overlap: int, cand_total: int, ref_total: int) -> "RougeScore":
        if ref_total == 0:
            return cls(0.0, 0.0, 0.0, True)
        p = overlap / cand_total if cand_total else 0.0
        r = overlap / ref_total
        f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        return cls(p, r, f)

    def to_json(self) -> dict:
        return asdict(self)


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _as_tokens(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def rouge_n(candidate, reference, n: int = 1) -> RougeScore:
    """Clipped n-gram overlap. Accepts raw text or pre-tokenized lists."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c = Counter(ngrams(_as_tokens(candidate), n))
    r = Counter(ngrams(_as_tokens(reference), n))
    overlap = sum((c & r).values())
    return RougeScore.from_counts(overlap, sum(c.values()), sum(r.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """LCS length with Hyyro's bit-parallel recurrence: one big-int bit vector
    over ``b`` updated per token of ``a``, instead of an |a| x |b| table."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    masks: dict = {}
    for i, tok in enumerate(b):
        masks[tok] = masks.get(tok, 0) | (1 << i)
    full = (1 << len(b)) - 1
    v = full
    for tok in a:
        u = v & masks.get(tok, 0)
        v = ((v + u) | (v - u)) & full
    # zero bits of v mark the columns where the LCS grows
    return len(b) - bin(v).count("1")


def rouge_l(candidate, reference) -> RougeScore:
    c, r = _as_tokens(candidate), _as_tokens(reference)
    return RougeScore.from_counts(lcs_length(c, r), len(c), len(r))


def rouge_all(candidate: str, reference: str) -> dict[str, RougeScore]:
    c, r = tokenize(candidate), tokenize(reference)
    return {"rouge1": rouge_n(c, r, 1), "rouge2": rouge_n(c, r, 2), "rougeL": rouge_l(c, r)}


def novel_ngrams(summary, document, n: int = 1) -> float:
    """Share of summary n-grams (with multiplicity) not found in the document.
    Returns NaN when the summary has fewer than ``n`` tokens."""
    s = ngrams(_as_tokens(summary), n)
    if not s:
        return math.nan
    seen = set(ngrams(_as_tokens(document), n))
    return sum(g not in seen for g in s) / len(s)


@dataclass(frozen=True)
class AbstractivityReport:
    novel_fraction: dict[int, float]
    counted: dict[int, int]  # summaries with at least n tokens

    def percentages(self) -> list[float]:
        return [100 * self.novel_fraction[n] for n in sorted(self.novel_fraction)]

    def to_json(self) -> dict:
        return {"novel_fraction": {str(k): v for k, v in self.novel_fraction.items()},
                "counted": {str(k): v for k, v in self.counted.items()}}


def abstractivity(pairs: Iterable[tuple[str, str]], ns: Sequence[int] = NOVEL_NS) -> AbstractivityReport:
    """Corpus mean of novel n-gram fractions over (document, summary) pairs;
    summaries shorter than n are left out of the mean for that n."""
    sums = {n: 0.0 for n in ns}
    counts = {n: 0 for n in ns}
    for doc, summ in pairs:
        d, s = tokenize(doc), tokenize(summ)
        for n in ns:
            v = novel_ngrams(s, d, n)
            if not math.isnan(v):
                sums[n] += v
                counts[n] += 1
    return AbstractivityReport({n: sums[n] / counts[n] if counts[n] else math.nan for n in ns}, counts)


# -- extractive baselines -----------------------------------------------------


def _sentences(doc) -> tuple[str, ...]:
    sents = doc.sentences if isinstance(doc, Document) else tuple(doc)
    if not sents:
        raise ValueError("document has no sentences")
    return sents


def lead_baseline(doc, n: int = 1) -> str:
    """First ``n`` sentences joined by single spaces."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return " ".join(_sentences(doc)[:n])


def ext_oracle(doc, reference: str) -> str:
    """The sentence with the highest ROUGE-L F1 against ``reference``
    (earliest on ties)."""
    ref = tokenize(reference)
    best, best_f = None, -1.0
    for s in _sentences(doc):
        f = rouge_l(tokenize(s), ref).f1
        if f > best_f:
            best, best_f = s, f
    return best


# -- corpus evaluation --------------------------------------------------------

REPORT_VERSION = 1
VARIANTS = ("rouge1", "rouge2", "rougeL")


def evaluate_corpus(candidates: Sequence[str], references: Sequence[str], ids: Sequence[str] | None = None) -> dict:
    """Per-document ROUGE plus corpus means of precision/recall/F1 per variant."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(candidates))]
    per_doc = []
    totals = {v: [0.0, 0.0, 0.0] for v in VARIANTS}
    for i, c, r in zip(ids, candidates, references):
        scores = rouge_all(c, r)
        per_doc.append({"id": i, **{v: scores[v].to_json() for v in VARIANTS}})
        for v in VARIANTS:
            s = scores[v]
            t = totals[v]
            t[0] += s.precision
            t[1] += s.recall
            t[2] += s.f1
    n = max(1, len(per_doc))
    means = {v: {"precision": t[0] / n, "recall": t[1] / n, "f1": t[2] / n} for v, t in totals.items()}
    return {
        "version": REPORT_VERSION,
        "n_documents": len(per_doc),
        "empty_references": sum(d["rouge1"]["empty_reference"] for d in per_doc),
        "mean": means,
        "documents": per_doc,
    }
