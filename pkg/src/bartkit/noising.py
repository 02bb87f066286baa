"""Input corruption for denoising pretraining: sentence permutation, then text
infilling with zero-truncated Poisson span lengths.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .corpus import Document
from .subword import BOS, EOS, MASK, SubwordVocab, TokenSequence


@dataclass(frozen=True)
class NoiseConfig:
    poisson_lambda: float = 3.5
    mask_ratio: float = 0.3
    permute_sentences: bool = True
    seed: int = 0
    max_length: int = 512  # framed target length, BOS/EOS included

    def __post_init__(self):
        if not self.poisson_lambda > 0:
            raise ValueError(f"poisson_lambda must be > 0, got {self.poisson_lambda}")
        if not 0 <= self.mask_ratio <= 1:
            raise ValueError(f"mask_ratio must be in [0, 1], got {self.mask_ratio}")
        if self.max_length < 3:
            raise ValueError("max_length must leave room for BOS, EOS and one token")


class MaskSpan(NamedTuple):
    start: int
    length: int
    truncated: bool = False  # length was cut to fit the budget or a gap


@dataclass(frozen=True)
class NoisedPair:
    id: str
    source: TokenSequence
    target: TokenSequence
    mask_spans: tuple[MaskSpan, ...] = ()

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": list(self.source.ids),
            "target": list(self.target.ids),
            "mask_spans": [list(s) for s in self.mask_spans],
        }

    @classmethod
    def from_json(cls, obj: dict, vocab_id: str = "") -> "NoisedPair":
        return cls(
            id=str(obj["id"]),
            source=TokenSequence(tuple(obj["source"]), vocab_id),
            target=TokenSequence(tuple(obj["target"]), vocab_id),
            mask_spans=tuple(MaskSpan(*s) for s in obj.get("mask_spans", ())),
        )


def doc_rng(seed: int, doc_id: str, chunk: int = 0) -> np.random.Generator:
    """Per-document generator: the seed mixed with a stable hash of the id, so
    results do not depend on processing order or sharding."""
    digest = hashlib.sha256(doc_id.encode("utf-8")).digest()
    mixed = np.random.SeedSequence([seed & (2**64 - 1), int.from_bytes(digest[:8], "little"), chunk])
    return np.random.Generator(np.random.PCG64(mixed))


def zero_truncated_poisson(rng: np.random.Generator, lam: float) -> int:
    while True:
        k = int(rng.poisson(lam))
        if k > 0:
            return k


def zero_truncated_poisson_mean(lam: float) -> float:
    return lam / -math.expm1(-lam)


def mask_budget(length: int, ratio: float) -> int:
    # tolerance guards against 0.29 * 100 == 28.999999999999996
    return int(math.floor(ratio * length + 1e-9))


def permute_sentences(doc: Document, rng: np.random.Generator) -> Document:
    if len(doc.sentences) == 1:
        return doc
    order = rng.permutation(len(doc.sentences))
    return Document.from_sentences(doc.id, (doc.sentences[i] for i in order))


def _free_starts(masked: np.ndarray, length: int) -> np.ndarray:
    """Start positions where ``length`` consecutive positions are all unmasked."""
    free = np.concatenate([[0], np.cumsum(~masked)])
    n = masked.size
    if length > n:
        return np.empty(0, dtype=np.int64)
    window = free[length:] - free[: n - length + 1]
    return np.flatnonzero(window == length)


def _longest_free_run(masked: np.ndarray) -> int:
    best = run = 0
    for m in masked:
        run = 0 if m else run + 1
        best = max(best, run)
    return best


def text_infill(
    tokens: TokenSequence | Iterable[int], config: NoiseConfig, rng: np.random.Generator,
    mask_id: int = MASK,
) -> tuple[TokenSequence, list[MaskSpan]]:
    """Replace sampled spans by a single mask token each.

    Exactly ``floor(mask_ratio * len)`` original tokens are removed. Span
    lengths come from a zero-truncated Poisson; the last span is cut to hit the
    budget exactly. Starts are uniform over positions whose whole span is still
    unmasked. If fragmentation leaves no gap long enough, the span shrinks to
    the longest free gap and is flagged ``truncated``.
    """
    vocab_id = tokens.vocab_id if isinstance(tokens, TokenSequence) else ""
    ids = np.asarray(tokens.ids if isinstance(tokens, TokenSequence) else list(tokens), dtype=np.int64)
    n = ids.size
    budget = mask_budget(n, config.mask_ratio)
    if budget < 1:
        return TokenSequence(tuple(int(i) for i in ids), vocab_id), []

    masked = np.zeros(n, dtype=bool)
    spans: list[MaskSpan] = []
    remaining = budget
    while remaining > 0:
        drawn = zero_truncated_poisson(rng, config.poisson_lambda)
        length = min(drawn, remaining)
        starts = _free_starts(masked, length)
        if starts.size == 0:
            length = min(length, _longest_free_run(masked))
            starts = _free_starts(masked, length)
        start = int(starts[rng.integers(starts.size)])
        masked[start : start + length] = True
        spans.append(MaskSpan(start, length, length < drawn))
        remaining -= length

    spans.sort()
    out: list[int] = []
    span_at = {s.start: s.length for s in spans}
    i = 0
    while i < n:
        if i in span_at:
            out.append(mask_id)
            i += span_at[i]
        else:
            out.append(int(ids[i]))
            i += 1
    return TokenSequence(tuple(out), vocab_id), spans


def _chunk_sentences(sent_ids: list[tuple[int, ...]], limit: int) -> list[list[tuple[int, ...]]]:
    """Greedy packing of encoded sentences into chunks of at most ``limit``
    tokens. A sentence longer than ``limit`` is hard-split."""
    chunks: list[list[tuple[int, ...]]] = []
    cur: list[tuple[int, ...]] = []
    cur_len = 0
    for ids in sent_ids:
        pieces = [ids[i : i + limit] for i in range(0, len(ids), limit)] if len(ids) > limit else [ids]
        for p in pieces:
            if cur and cur_len + len(p) > limit:
                chunks.append(cur)
                cur, cur_len = [], 0
            cur.append(p)
            cur_len += len(p)
    if cur:
        chunks.append(cur)
    return chunks


def make_training_pair(doc: Document, vocab: SubwordVocab, config: NoiseConfig) -> list[NoisedPair]:
    """Build ``(n(X), X)`` pairs for one document.

    Returns one pair per chunk; a document whose framed encoding fits in
    ``config.max_length`` gives exactly one pair. Targets are the original
    sentence order framed with BOS/EOS; sources are the permuted (if enabled)
    and infilled token stream, framed the same way. Mask spans index the
    unframed, permuted token stream.
    """
    sent_ids = [vocab.encode(s).ids for s in doc.sentences]
    limit = config.max_length - 2
    if sum(map(len, sent_ids)) <= limit:
        chunks = [sent_ids]
    else:
        chunks = _chunk_sentences(sent_ids, limit)

    pairs = []
    vid = vocab.vocab_id
    for k, chunk in enumerate(chunks):
        pair_id = doc.id if len(chunks) == 1 else f"{doc.id}#{k}"
        rng = doc_rng(config.seed, doc.id, k)
        order = np.arange(len(chunk))
        if config.permute_sentences and len(chunk) > 1:
            order = rng.permutation(len(chunk))
        body = [t for s in chunk for t in s]
        permuted = [t for i in order for t in chunk[i]]
        if config.mask_ratio > 0 and permuted:
            noised, spans = text_infill(permuted, config, rng)
            src = noised.ids
        else:
            src, spans = tuple(permuted), []
        pairs.append(
            NoisedPair(
                id=pair_id,
                source=TokenSequence((BOS, *src, EOS), vid),
                target=TokenSequence((BOS, *body, EOS), vid),
                mask_spans=tuple(spans),
            )
        )
    return pairs


def noise_corpus(docs: Iterable[Document], vocab: SubwordVocab, config: NoiseConfig) -> Iterator[NoisedPair]:
    for doc in docs:
        yield from make_training_pair(doc, vocab, config)


def write_pairs(pairs: Iterable[NoisedPair], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps(p.to_json()) + "\n")
            n += 1
    return n


def read_pairs(path: str | Path, vocab_id: str = "") -> Iterator[NoisedPair]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield NoisedPair.from_json(json.loads(line), vocab_id)


def config_dict(config: NoiseConfig) -> dict:
    return asdict(config)
