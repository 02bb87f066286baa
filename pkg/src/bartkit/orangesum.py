"""OrangeSum-style summarization datasets: filtering, splitting, statistics.

Articles come in as JSON-lines records with ``title``, ``abstract``, ``body``
and optional ``category``, ``date`` and ``id``. Two tasks share one article
pool: *title* (body -> title) and *abstract* (body -> abstract).
"""
from __future__ import annotations

import datetime as dt
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .corpus import CleaningRules, clean_text, split_sentences
from .metrics import AbstractivityReport, abstractivity, novel_ngrams, tokenize

TASKS = ("title", "abstract")
SPLITS = ("train", "val", "test")
DEFAULT_THRESHOLD = 0.57
MIN_TITLE_WORDS = 5
HELD_OUT = 1500


class DatasetTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class ArticleRecord:
    title: str
    abstract: str
    body: str
    category: str = ""
    date: dt.date | None = None
    id: str = ""

    @classmethod
    def from_json(cls, obj: dict, index: int = 0) -> "ArticleRecord":
        date = obj.get("date")
        if isinstance(date, str) and date:
            date = dt.date.fromisoformat(date[:10])
        return cls(
            title=obj.get("title") or "",
            abstract=obj.get("abstract") or "",
            body=obj.get("body") or obj.get("text") or "",
            category=obj.get("category") or "",
            date=date or None,
            id=str(obj.get("id", index)),
        )


@dataclass(frozen=True)
class SummPair:
    id: str
    document: str
    summary: str


@dataclass
class SummDataset:
    task: str
    train: list[SummPair]
    val: list[SummPair]
    test: list[SummPair]
    dropped: Counter = field(default_factory=Counter)
    threshold: float | None = None

    def split(self, name: str) -> list[SummPair]:
        return {"train": self.train, "val": self.val, "valid": self.val, "test": self.test}[name]

    def all_pairs(self) -> list[SummPair]:
        return self.train + self.val + self.test

    def sizes(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}


def read_articles(path: str | Path) -> Iterator[ArticleRecord]:
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            if line.strip():
                yield ArticleRecord.from_json(json.loads(line), i)


def _filter_articles(articles: Iterable[ArticleRecord], task: str, rules: CleaningRules, dropped: Counter):
    """Pairs passing the article-level filters, plus each pair's novel-unigram
    fraction (abstract task only)."""
    out = []
    for a in articles:
        body = clean_text(a.body, rules)
        title = clean_text(a.title, rules)
        if not body:
            dropped["empty_body"] += 1
            continue
        if len(tokenize(title)) < MIN_TITLE_WORDS:
            dropped["short_title"] += 1
            continue
        summary = title if task == "title" else clean_text(a.abstract, rules)
        if not tokenize(summary):
            dropped["empty_summary"] += 1
            continue
        frac = novel_ngrams(summary, body, 1) if task == "abstract" else 0.0
        out.append((SummPair(a.id, body, summary), frac))
    return out


def build_dataset(
    articles: Iterable[ArticleRecord],
    task: str,
    novel_unigram_threshold: float = DEFAULT_THRESHOLD,
    seed: int = 0,
    filter_quantile: float | None = None,
    n_test: int = HELD_OUT,
    n_val: int = HELD_OUT,
    rules: CleaningRules = CleaningRules(),
) -> SummDataset:
    """Filter, shuffle with ``seed``, then take test, val and train in that order.

    Articles with an empty body or a title under five words are dropped. For
    the abstract task, pairs whose abstract has a novel-unigram fraction above
    the threshold are dropped too; with ``filter_quantile=q`` the threshold is
    instead the (1 - q) quantile of the observed fractions.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    dropped: Counter = Counter()
    kept = _filter_articles(articles, task, rules, dropped)
    threshold = None
    if task == "abstract":
        threshold = novel_unigram_threshold
        if filter_quantile is not None:
            if not 0 <= filter_quantile < 1:
                raise ValueError("filter_quantile must be in [0, 1)")
            threshold = float(np.quantile([f for _, f in kept], 1 - filter_quantile)) if kept else 0.0
        before = len(kept)
        kept = [(p, f) for p, f in kept if f <= threshold]
        dropped["too_abstractive"] += before - len(kept)
    pairs = [p for p, _ in kept]
    need = n_test + n_val + 1
    if len(pairs) < need:
        raise DatasetTooSmall(
            f"{len(pairs)} pairs survive filtering (dropped: {dict(dropped)}); need at least {need}"
        )
    random.Random(seed).shuffle(pairs)
    return SummDataset(
        task,
        train=pairs[n_test + n_val :],
        val=pairs[n_test : n_test + n_val],
        test=pairs[:n_test],
        dropped=dropped,
        threshold=threshold,
    )


# -- statistics ---------------------------------------------------------------


@dataclass
class SideStats:
    avg_words: float
    avg_sentences: float
    vocab_size: int


@dataclass
class DatasetStats:
    sizes: dict[str, int]
    document: SideStats
    summary: SideStats

    def to_json(self) -> dict:
        return {
            "sizes": self.sizes,
            "document": vars(self.document),
            "summary": vars(self.summary),
        }


def _side_stats(texts: Sequence[str]) -> SideStats:
    words = sents = 0
    vocab = set()
    for t in texts:
        toks = tokenize(t)
        words += len(toks)
        sents += len(split_sentences(t))
        vocab.update(toks)
    n = len(texts)
    return SideStats(words / n, sents / n, len(vocab))


def dataset_stats(ds: SummDataset) -> DatasetStats:
    """Sizes per split; averages and vocabularies over all splits together."""
    for s in SPLITS:
        if not ds.split(s):
            raise ValueError(f"split {s!r} is empty")
    pairs = ds.all_pairs()
    return DatasetStats(
        ds.sizes(),
        _side_stats([p.document for p in pairs]),
        _side_stats([p.summary for p in pairs]),
    )


def abstractivity_table(ds: SummDataset, splits: Sequence[str] = SPLITS) -> AbstractivityReport:
    pairs = [p for s in splits for p in ds.split(s)]
    if not pairs:
        raise ValueError("dataset is empty")
    return abstractivity((p.document, p.summary) for p in pairs)


# -- on-disk layout -------------------------------------------------------------

_FILE_SPLITS = {"train": "train", "val": "valid", "test": "test"}


def _one_line(text: str) -> str:
    return " ".join(text.split())


def write_dataset(ds: SummDataset, directory: str | Path) -> Path:
    """``{train,valid,test}.{source,target}`` (one item per line), ``{split}.ids``
    and ``stats.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, fname in _FILE_SPLITS.items():
        pairs = ds.split(split)
        for ext, get in (("source", lambda p: p.document), ("target", lambda p: p.summary), ("ids", lambda p: p.id)):
            with open(directory / f"{fname}.{ext}", "w", encoding="utf-8") as f:
                for p in pairs:
                    f.write(_one_line(get(p)) + "\n")
    stats = dataset_stats(ds).to_json()
    stats["task"] = ds.task
    stats["threshold"] = ds.threshold
    stats["dropped"] = dict(ds.dropped)
    stats["abstractivity"] = abstractivity_table(ds).to_json()
    (directory / "stats.json").write_text(json.dumps(stats, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return directory


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def load_split(directory: str | Path, split: str) -> list[SummPair]:
    """Load one split from the paired-text layout (``valid`` or ``val``), or
    from ``{split}.jsonl`` with ``text``/``document`` and ``summary`` fields."""
    directory = Path(directory)
    names = [split] + (["valid", "val"] if split in ("val", "valid") else [])
    for name in names:
        src, tgt = directory / f"{name}.source", directory / f"{name}.target"
        if src.exists() and tgt.exists():
            docs, sums = _read_lines(src), _read_lines(tgt)
            if len(docs) != len(sums):
                raise ValueError(f"{src}: {len(docs)} lines vs {len(sums)} in {tgt.name}")
            ids_path = directory / f"{name}.ids"
            ids = _read_lines(ids_path) if ids_path.exists() else [f"{name}-{i}" for i in range(len(docs))]
            return [SummPair(i, d, s) for i, d, s in zip(ids, docs, sums)]
        jl = directory / f"{name}.jsonl"
        if jl.exists():
            out = []
            for i, line in enumerate(_read_lines(jl)):
                if line.strip():
                    o = json.loads(line)
                    out.append(SummPair(str(o.get("id", f"{name}-{i}")), o.get("document") or o.get("text", ""),
                                        o.get("summary", "")))
            return out
    raise FileNotFoundError(f"no {split} split under {directory}")


def load_dataset(directory: str | Path, task: str) -> SummDataset:
    return SummDataset(task, *(load_split(directory, s) for s in SPLITS))

