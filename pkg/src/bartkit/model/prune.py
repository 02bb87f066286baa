"""Vocabulary pruning: drop token rows from every embedding-shaped tensor."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..subword import NUM_SPECIALS, SubwordVocab
from .config import ModelConfig, param_count
from .transformer import ModelParameters


def _normalize_keep(keep_ids: Iterable[int], vocab_size: int) -> list[int]:
    keep = sorted(set(int(i) for i in keep_ids))
    if keep and (keep[0] < 0 or keep[-1] >= vocab_size):
        raise ValueError(f"keep_ids must lie in [0, {vocab_size})")
    missing = [i for i in range(NUM_SPECIALS) if i not in set(keep)]
    if missing:
        raise ValueError(f"keep_ids is missing special token ids {missing}")
    return keep


def prune_embeddings(params: ModelParameters, keep_ids: Iterable[int]) -> tuple[ModelParameters, dict[int, int]]:
    """Restrict every embedding tensor to ``keep_ids`` (sorted; specials stay at
    ids 0..5). Returns the new parameters and the old -> new id map. All other
    tensors are shared, unchanged, with the input."""
    cfg = params.config
    keep = _normalize_keep(keep_ids, cfg.vocab_size)
    remap = {old: new for new, old in enumerate(keep)}
    idx = np.asarray(keep, dtype=np.int64)
    tensors = {}
    for name, t in params.tensors.items():
        tensors[name] = t[idx].copy() if name in cfg.embedding_names else t
    return ModelParameters(cfg.replace(vocab_size=len(keep)), tensors), remap


def expected_reduction(config: ModelConfig, n_dropped: int) -> int:
    return n_dropped * config.hidden_dim * len(config.embedding_names)


def pruned_param_count(config: ModelConfig, new_vocab_size: int) -> int:
    return param_count(config.replace(vocab_size=new_vocab_size))


def prune_vocab(vocab: SubwordVocab, keep_ids: Iterable[int]) -> SubwordVocab:
    """Matching vocabulary: kept pieces in id order, and only merges whose
    inputs and output all survive."""
    keep = _normalize_keep(keep_ids, len(vocab))
    pieces = [vocab.pieces[i] for i in keep]
    freqs = [vocab.piece_freqs[i] for i in keep]
    alive = set(pieces)
    merges = [m for m in vocab.merges if m[0] in alive and m[1] in alive and m[0] + m[1] in alive]
    return SubwordVocab(pieces, merges, freqs, vocab.coverage, vocab.coverage_threshold)
