"""Byte-pair-encoding subword vocabulary trained directly on raw text.

Whitespace is not pre-tokenized away: every space becomes the visible marker
``▁`` that starts a word-initial piece (SentencePiece convention), so decoding
is lossless. Merges never cross a marker, which is the only segmentation the
trainer does.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document

MARKER = "▁"
UNK_GLYPH = "⁇"

PAD, UNK, BOS, EOS, MASK, SEP = range(6)
SPECIAL_TOKENS = ("<pad>", "<unk>", "<s>", "</s>", "<mask>", "<sep>")
NUM_SPECIALS = len(SPECIAL_TOKENS)

FORMAT_VERSION = 1


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    vocab_id: str = ""

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def _units(text: str) -> list[str]:
    # "a  b" -> ["a", "", "b"]; each unit is later prefixed with the marker
    return text.split(" ")


@dataclass
class SubwordVocab:
    """Ordered piece inventory plus the ordered merge list.

    ``pieces[i]`` has id ``i``; the first six ids are the special tokens.
    ``merges`` holds ``(left, right, count)`` in learned order, where count is
    the pair frequency at the moment the merge was selected.
    """

    pieces: list[str]
    merges: list[tuple[str, str, int]]
    piece_freqs: list[int]
    coverage: float
    coverage_threshold: float = 1.0
    _piece_to_id: dict = field(init=False, repr=False)
    _ranks: dict = field(init=False, repr=False)
    _alphabet: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.pieces[:NUM_SPECIALS]) != SPECIAL_TOKENS:
            raise VocabError("special tokens must occupy ids 0..5")
        self._piece_to_id = {}
        for i, p in enumerate(self.pieces):
            self._piece_to_id.setdefault(p, i)
        self._ranks = {}
        for r, (a, b, _) in enumerate(self.merges):
            self._ranks.setdefault((a, b), r)
            if a + b not in self._piece_to_id:
                raise VocabError(f"merge output {a + b!r} missing from pieces")
        self._alphabet = frozenset(
            p for p in self.pieces[NUM_SPECIALS:] if len(p) == 1
        )
        self._encode_unit = lru_cache(maxsize=1 << 16)(self._encode_unit_uncached)

    def __len__(self):
        return len(self.pieces)

    @property
    def size(self) -> int:
        return len(self.pieces)

    @property
    def alphabet(self) -> frozenset:
        return self._alphabet

    @property
    def vocab_id(self) -> str:
        h = hashlib.sha256()
        for p in self.pieces:
            h.update(p.encode("utf-8") + b"\x00")
        for a, b, _ in self.merges:
            h.update(a.encode("utf-8") + b"\x01" + b.encode("utf-8") + b"\x00")
        return h.hexdigest()[:16]

    def piece_id(self, piece: str) -> int:
        return self._piece_to_id.get(piece, UNK)

    def is_covered(self, text: str) -> bool:
        return all(ch in self._alphabet and ch != MARKER for ch in text if ch != " ")

    # -- encoding ---------------------------------------------------------

    def _encode_unit_uncached(self, unit: str) -> tuple[int, ...]:
        symbols: list[str | None] = [MARKER]
        for ch in unit:
            symbols.append(ch if ch in self._alphabet and ch != MARKER else None)
        ranks = self._ranks
        while len(symbols) > 1:
            best = None
            for a, b in zip(symbols, symbols[1:]):
                if a is None or b is None:
                    continue
                r = ranks.get((a, b))
                if r is not None and (best is None or r < best):
                    best = r
            if best is None:
                break
            left, right, _ = self.merges[best]
            merged: list[str | None] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(UNK if s is None else self._piece_to_id[s] for s in symbols)

    def encode(self, text: str) -> TokenSequence:
        """Encode text by applying merges in learned order (lowest rank first)
        within each marker-delimited unit. Uncovered characters become UNK."""
        if not text:
            return TokenSequence((), self.vocab_id)
        ids: list[int] = []
        for unit in _units(text):
            ids.extend(self._encode_unit(unit))
        return TokenSequence(tuple(ids), self.vocab_id)

    def decode(self, tokens: TokenSequence | Sequence[int]) -> str:
        ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
        out = []
        n = len(self.pieces)
        for i in ids:
            if not 0 <= i < n:
                raise IndexError(f"token id {i} out of range for vocab of size {n}")
            if i == UNK:
                out.append(UNK_GLYPH)
            elif i >= NUM_SPECIALS:
                out.append(self.pieces[i])
        text = "".join(out).replace(MARKER, " ")
        return text[1:] if text.startswith(" ") else text

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        lines = [
            f"#bartkit-bpe\tversion={FORMAT_VERSION}",
            f"#coverage\t{self.coverage!r}\t{self.coverage_threshold!r}",
            "#pieces",
        ]
        for i, (p, f) in enumerate(zip(self.pieces, self.piece_freqs)):
            lines.append(f"{_escape(p)}\t{i}\t{f}")
        lines.append("#merges")
        for a, b, c in self.merges:
            lines.append(f"{_escape(a)}\t{_escape(b)}\t{c}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SubwordVocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        header = lines[0].split("\t")
        if header[0] != "#bartkit-bpe":
            raise VocabError(f"{path}: not a vocab file")
        version = int(header[1].split("=")[1])
        if version != FORMAT_VERSION:
            raise VocabError(f"{path}: unsupported vocab version {version}")
        _, cov, thr = lines[1].split("\t")
        pieces, freqs, merges = [], [], []
        section = None
        for line in lines[2:]:
            if not line:
                continue
            if line in ("#pieces", "#merges"):
                section = line
                continue
            cols = line.split("\t")
            if section == "#pieces":
                if int(cols[1]) != len(pieces):
                    raise VocabError(f"{path}: ids are not dense at {cols[1]}")
                pieces.append(_unescape(cols[0]))
                freqs.append(int(cols[2]))
            else:
                merges.append((_unescape(cols[0]), _unescape(cols[1]), int(cols[2])))
        return cls(pieces, merges, freqs, float(cov), float(thr))


_ESC = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESC = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def _escape(s: str) -> str:
    return "".join(_ESC.get(c, c) for c in s)


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append(_UNESC[s[i + 1]])
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def _texts(corpus: Iterable) -> Iterable[str]:
    for item in corpus:
        yield item.text if isinstance(item, Document) else item


def select_alphabet(char_counts: Counter, coverage: float) -> tuple[list[str], float]:
    """Most frequent characters until their cumulative share reaches ``coverage``.

    Ties are broken by codepoint. The marker is always kept. Returns the
    alphabet (frequency order) and the achieved coverage.
    """
    total = sum(char_counts.values())
    if total == 0:
        raise VocabError("empty training corpus")
    ordered = sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept, acc = [], 0
    for ch, c in ordered:
        if acc >= coverage * total and ch != MARKER:
            continue
        kept.append(ch)
        acc += c
    return kept, acc / total


def train_bpe(corpus: Iterable, vocab_size: int = 50000, coverage: float = 0.9995) -> SubwordVocab:
    """Learn a BPE vocabulary of exactly ``vocab_size`` pieces.

    At every step the most frequent adjacent pair (ties: lexicographically
    smallest pair) inside a unit is merged. Pair counts are maintained
    incrementally with a lazy max-heap, touching only words that contain the
    merged pair.
    """
    if not 0 < coverage <= 1:
        raise VocabError(f"coverage must be in (0, 1], got {coverage}")

    word_counts: Counter = Counter()
    for text in _texts(corpus):
        if text:
            word_counts.update(_units(text))
    char_counts: Counter = Counter()
    for w, f in word_counts.items():
        char_counts[MARKER] += f
        for ch in w:
            char_counts[ch] += f
    # a literal marker in the text is treated as an unknown character
    marker_in_text = sum(f * w.count(MARKER) for w, f in word_counts.items())
    char_counts[MARKER] -= marker_in_text
    alphabet, achieved = select_alphabet(char_counts, coverage)
    if vocab_size <= NUM_SPECIALS + len(alphabet):
        raise VocabError(
            f"vocab_size {vocab_size} must exceed specials + covered characters "
            f"({NUM_SPECIALS} + {len(alphabet)})"
        )

    covered = set(alphabet)
    words: list[list[str | None]] = []
    freqs: list[int] = []
    for w, f in word_counts.items():
        words.append([MARKER] + [ch if ch in covered and ch != MARKER else None for ch in w])
        freqs.append(f)

    pair_counts: dict[tuple[str, str], int] = defaultdict(int)
    where: dict[tuple[str, str], set[int]] = defaultdict(set)

    def pairs_of(sym):
        for a, b in zip(sym, sym[1:]):
            if a is not None and b is not None:
                yield a, b

    for idx, sym in enumerate(words):
        for p in pairs_of(sym):
            pair_counts[p] += freqs[idx]
            where[p].add(idx)
    heap = [(-c, a, b) for (a, b), c in pair_counts.items()]
    heapq.heapify(heap)

    pieces = list(SPECIAL_TOKENS) + alphabet
    piece_freqs = [0] * NUM_SPECIALS + [char_counts[ch] for ch in alphabet]
    known = set(pieces)
    merges: list[tuple[str, str, int]] = []

    while len(pieces) < vocab_size:
        best = None
        while heap:
            negc, a, b = heapq.heappop(heap)
            if pair_counts.get((a, b), 0) == -negc and negc < 0:
                best = (a, b, -negc)
                break
        if best is None:
            raise VocabError(
                f"corpus too small to reach vocab_size={vocab_size}; "
                f"achievable size is {len(pieces)}"
            )
        a, b, count = best
        new = a + b
        merges.append((a, b, count))
        if new not in known:
            known.add(new)
            pieces.append(new)
            piece_freqs.append(count)

        changed = set()
        for idx in list(where[(a, b)]):
            sym, f = words[idx], freqs[idx]
            for p in pairs_of(sym):
                pair_counts[p] -= f
                changed.add(p)
            merged: list[str | None] = []
            i = 0
            while i < len(sym):
                if i + 1 < len(sym) and sym[i] == a and sym[i + 1] == b:
                    merged.append(new)
                    i += 2
                else:
                    merged.append(sym[i])
                    i += 1
            words[idx] = merged
            for p in pairs_of(sym):
                where[p].discard(idx)
            for p in pairs_of(merged):
                pair_counts[p] += f
                where[p].add(idx)
                changed.add(p)
        for p in changed:
            c = pair_counts[p]
            if c > 0:
                heapq.heappush(heap, (-c, p[0], p[1]))
            else:
                pair_counts.pop(p, None)
                where.pop(p, None)

    return SubwordVocab(pieces, merges, piece_freqs, achieved, coverage)


def encode(vocab: SubwordVocab, text: str) -> TokenSequence:
    return vocab.encode(text)


def decode(vocab: SubwordVocab, tokens: TokenSequence | Sequence[int]) -> str:
    return vocab.decode(tokens)


def sample_documents(docs: Iterable, fraction: float, seed: int = 0) -> list:
    """Reservoir-sample ``round(fraction * n)`` documents, returned in input order.

    Uses Algorithm R on the materialized stream so the sample size is known.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    items = list(docs)
    k = max(1, round(fraction * len(items))) if items else 0
    if k >= len(items):
        return items
    rng = random.Random(seed)
    reservoir = list(range(k))
    for i in range(k, len(items)):
        j = rng.randint(0, i)
        if j < k:
            reservoir[j] = i
    return [items[i] for i in sorted(reservoir)]
