"""Beam search and greedy decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model.layers import log_softmax
from .model.transformer import ModelParameters, decode, encode, output_logits, pad_ids
from .subword import BOS, EOS, TokenSequence

# prefixes (each starting with BOS) -> (len(prefixes), V) next-token log-probs
Scorer = Callable[[Sequence[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    max_len: int = 64
    length_penalty: float = 1.0
    eos_id: int = EOS
    bos_id: int = BOS

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]  # generated tokens, BOS excluded, EOS included when finished
    log_prob: float
    score: float  # log_prob / len(ids) ** length_penalty
    finished: bool

    def tokens(self, vocab_id: str = "") -> TokenSequence:
        return TokenSequence(self.ids, vocab_id)


def normalized(log_prob: float, length: int, penalty: float) -> float:
    return log_prob / (length ** penalty) if length else log_prob


def _best(hyps: list[Hypothesis]) -> Hypothesis:
    # highest score, then lexicographically lowest ids
    return min(hyps, key=lambda h: (-h.score, h.ids))


def beam_search_fn(scorer: Scorer, config: BeamConfig = BeamConfig()) -> Hypothesis:
    """Beam search over any next-token scorer.

    Each step keeps the ``beam_size - len(finished)`` best extensions by
    cumulative log-probability (ties: lower token id, then earlier parent);
    extensions with zero probability are discarded. Extensions ending in EOS
    leave the beam as finished hypotheses; the returned one has the highest
    length-normalized score. If nothing finishes
    within ``max_len`` the best partial hypothesis is returned with
    ``finished=False``.
    """
    pen = config.length_penalty
    active: list[tuple[tuple[int, ...], float]] = [((config.bos_id,), 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(config.max_len):
        k = config.beam_size - len(finished)
        if k <= 0 or not active:
            break
        logp = np.asarray(scorer([p for p, _ in active]), dtype=np.float64)
        V = logp.shape[1]
        cum = np.array([c for _, c in active])[:, None] + logp
        flat = cum.ravel()
        parent = np.repeat(np.arange(len(active)), V)
        token = np.tile(np.arange(V), len(active))
        # zero-probability extensions never enter the beam
        order = np.lexsort((parent, token, -flat))
        order = order[np.isfinite(flat[order])][:k]
        if not len(order):
            break
        nxt = []
        for j in order:
            prefix, _ = active[parent[j]]
            seq = prefix + (int(token[j]),)
            lp = float(flat[j])
            if token[j] == config.eos_id:
                gen = seq[1:]
                finished.append(Hypothesis(gen, lp, normalized(lp, len(gen), pen), True))
            else:
                nxt.append((seq, lp))
        active = nxt
    if finished:
        return _best(finished)
    partial = [Hypothesis(p[1:], c, normalized(c, len(p) - 1, pen), False) for p, c in active]
    return _best(partial)


def greedy_fn(scorer: Scorer, config: BeamConfig = BeamConfig()) -> Hypothesis:
    """Argmax decoding (ties: lowest token id)."""
    prefix = (config.bos_id,)
    total = 0.0
    for _ in range(config.max_len):
        logp = np.asarray(scorer([prefix]), dtype=np.float64)[0]
        tok = int(np.argmax(logp))
        total += float(logp[tok])
        prefix = prefix + (tok,)
        if tok == config.eos_id:
            gen = prefix[1:]
            return Hypothesis(gen, total, normalized(total, len(gen), config.length_penalty), True)
    gen = prefix[1:]
    return Hypothesis(gen, total, normalized(total, len(gen), config.length_penalty), False)


def model_scorer(params: ModelParameters, source: TokenSequence | Sequence[int]) -> Scorer:
    """Next-token log-probs from the transformer; the source is encoded once."""
    ids = tuple(source.ids) if isinstance(source, TokenSequence) else tuple(source)
    if not ids:
        raise ValueError("empty source")
    src, src_mask = pad_ids([ids])
    enc, _ = encode(params, src, src_mask)

    def scorer(prefixes):
        dec, dec_mask = pad_ids(prefixes)
        n = len(prefixes)
        hid, _ = decode(params, dec, dec_mask, np.repeat(enc, n, axis=0), np.repeat(src_mask, n, axis=0))
        last = dec_mask.sum(axis=1) - 1
        return log_softmax(output_logits(params, hid[np.arange(n), last]).astype(np.float64))

    return scorer


def beam_search(params: ModelParameters, source, config: BeamConfig = BeamConfig()) -> Hypothesis:
    return beam_search_fn(model_scorer(params, source), config)


def greedy_decode(params: ModelParameters, source, config: BeamConfig = BeamConfig()) -> Hypothesis:
    return greedy_fn(model_scorer(params, source), config)
