"""Document-level corpus preparation.

Raw records are cleaned and turned into one ``Document`` per source document
(not per sentence), so that sentence permutation has something to permute.
"""
from __future__ import annotations

import json
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

JOIN = " "

# Words ending in "." that do not end a sentence. Case-sensitive.
FRENCH_ABBREVIATIONS = frozenset(
    """
    M. MM. Mme. Mmes. Mlle. Mlles. Mgr. Me. Dr. Pr. Ste. St. Cie. Sté. Vve.
    av. Av. bd. Bd. boul. fg. apr. J.-C. av.-J.-C. env. hab. p. pp. chap.
    éd. cf. Cf. fig. Fig. ex. Ex. tél. Tél. sq. suiv. coll. dir. trad. op.
    janv. févr. avr. juil. oct. nov. déc. Janv. Févr. Avr. Juil. Oct. Nov. Déc.
    Jr. Sr. Inc. Ltd. Co. vs. No.
    """.split()
)

_CLOSERS = "»\"”’')]"
_OPENERS = "«\"“‘'(["
_BOUNDARY_RE = re.compile(r"[.!?…]+(?:\s*[»\"”’')\]])*(?=\s)")
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class CleaningRules:
    """Cleaning knobs. Defaults: drop empty, strip controls, collapse whitespace, NFC."""

    min_chars: int = 1
    strip_control: bool = True
    normalize_whitespace: bool = True
    unicode_normalization_form: str = "NFC"  # "none" or "NFC"

    def __post_init__(self):
        if self.min_chars < 0:
            raise ValueError("min_chars must be >= 0")
        if self.unicode_normalization_form not in ("none", "NFC"):
            raise ValueError(
                f"unicode_normalization_form must be 'none' or 'NFC', "
                f"got {self.unicode_normalization_form!r}"
            )


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"document {self.id!r} has empty text")
        if not self.sentences:
            raise ValueError(f"document {self.id!r} has no sentences")
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if JOIN.join(self.sentences) != self.text:
            raise ValueError(f"document {self.id!r}: sentences do not join back to text")

    @classmethod
    def from_sentences(cls, id: str, sentences: Iterable[str]) -> "Document":
        sentences = tuple(sentences)
        return cls(id=id, text=JOIN.join(sentences), sentences=sentences)

    def to_json(self) -> dict:
        return {"id": self.id, "text": self.text, "sentences": list(self.sentences)}

    @classmethod
    def from_json(cls, obj: dict) -> "Document":
        return cls(id=str(obj["id"]), text=obj["text"], sentences=tuple(obj["sentences"]))


@dataclass
class CleanStats:
    """Counts of records seen, kept and dropped (by reason)."""

    seen: int = 0
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())

    def to_json(self) -> dict:
        return {"seen": self.seen, "kept": self.kept, "dropped": dict(sorted(self.dropped.items()))}


def _is_control(ch: str) -> bool:
    return ch != "\n" and unicodedata.category(ch) == "Cc"


def clean_text(text: str, rules: CleaningRules = CleaningRules()) -> str:
    """Apply the cleaning rules to one string.

    Non-whitespace control characters go first, so they cannot split or pad a
    run of spaces. Whitespace is then collapsed (a tab becomes a space rather
    than disappearing), and any control left over (tabs, when whitespace is
    kept as is) is removed last.
    """
    if rules.unicode_normalization_form == "NFC":
        text = unicodedata.normalize("NFC", text)
    if rules.strip_control:
        text = "".join(ch for ch in text if ch.isspace() or not _is_control(ch))
    if rules.normalize_whitespace:
        text = _WS_RE.sub(" ", text).strip()
    if rules.strip_control:
        text = "".join(ch for ch in text if not _is_control(ch))
    return text


def _is_sentence_start(ch: str) -> bool:
    return ch.isupper() or ch.isdigit() or ch in _OPENERS


def _is_abbreviation(text: str, dot_end: int) -> bool:
    # dot_end is the index just past the "." that might end a sentence
    start = dot_end - 1
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    word = text[start:dot_end].lstrip(_OPENERS)
    if word in FRENCH_ABBREVIATIONS:
        return True
    # initials such as "J." in "J. Chirac"
    return len(word) == 2 and word[0].isalpha() and word[0].isupper()


def split_sentences(text: str) -> list[str]:
    """Split text after ., !, ?, … (plus trailing closing quotes) followed by
    whitespace and an uppercase letter, digit or opening quote.

    A lone "." after a known French abbreviation or a single capital initial
    is not a boundary. Sentences are stripped; empty text gives an empty list.
    """
    text = text.strip()
    if not text:
        return []
    sentences = []
    start = 0
    for m in _BOUNDARY_RE.finditer(text):
        end = m.end()
        nxt = end
        while nxt < len(text) and text[nxt].isspace():
            nxt += 1
        if nxt >= len(text) or not _is_sentence_start(text[nxt]):
            continue
        if m.group().rstrip(_CLOSERS + " \t\n") == "." and _is_abbreviation(text, m.start() + 1):
            continue
        piece = text[start:end].strip()
        if piece:
            sentences.append(piece)
        start = nxt
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def make_document(id: str, text: str, rules: CleaningRules = CleaningRules()) -> Document | None:
    """Clean one text and segment it. Returns None when the rules reject it."""
    cleaned = clean_text(text, rules)
    if not cleaned.strip() or len(cleaned) < rules.min_chars:
        return None
    return Document.from_sentences(id, split_sentences(cleaned))


def _record_fields(record, index: int) -> tuple[str, str]:
    if isinstance(record, Document):
        return record.id, record.text
    if isinstance(record, dict):
        text = record.get("text")
        if not isinstance(text, (str, bytes)):
            raise TypeError("record has no string 'text' field")
        rid = record.get("id")
        return (str(rid) if rid is not None else str(index)), text
    return str(index), record


def _decode(text) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8")
    # lone surrogates come from surrogateescape'd bad bytes
    text.encode("utf-8")
    return text


def clean_corpus(
    raw: Iterable, rules: CleaningRules = CleaningRules(), stats: CleanStats | None = None
) -> Iterator[Document]:
    """Clean a stream of raw records into Documents, preserving order.

    Records may be ``str``, UTF-8 ``bytes``, dicts with a ``text`` field (and
    optionally ``id``), or ``Document`` objects. Records without an id get their
    position in the input stream. Rejected records are counted in ``stats``.
    """
    if stats is None:
        stats = CleanStats()
    for index, record in enumerate(raw):
        stats.seen += 1
        try:
            rid, text = _record_fields(record, index)
            text = _decode(text)
        except (UnicodeError, TypeError) as exc:
            stats.dropped["invalid"] += 1
            log.debug("dropping record %d: %s", index, exc)
            continue
        cleaned = clean_text(text, rules)
        if not cleaned.strip():
            stats.dropped["empty"] += 1
            continue
        if len(cleaned) < rules.min_chars:
            stats.dropped["too_short"] += 1
            continue
        stats.kept += 1
        yield Document.from_sentences(rid, split_sentences(cleaned))


def read_raw_records(path: str | Path) -> Iterator:
    """Yield raw records from a JSON-lines file (field "text") or a plain text
    file where documents are separated by blank lines.

    Lines are read as bytes so that invalid UTF-8 surfaces as a dropped record
    in ``clean_corpus`` instead of an exception here.
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    if path.suffix in (".jsonl", ".json"):
        for line in data.splitlines():
            if not line.strip():
                continue
            try:
                yield json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                yield {"text": None}  # counted as invalid by clean_corpus
        return
    block: list[bytes] = []
    for line in data.splitlines():
        if line.strip():
            block.append(line)
        elif block:
            yield b"\n".join(block)
            block = []
    if block:
        yield b"\n".join(block)


def read_documents(path: str | Path) -> Iterator[Document]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield Document.from_json(json.loads(line))


def write_documents(docs: Iterable[Document], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            f.write(json.dumps(doc.to_json(), ensure_ascii=False) + "\n")
            n += 1
    return n
