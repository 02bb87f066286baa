"""Sequence classification from the decoder's last-token state.

The same joined sequence ``<s> a <sep> b </s>`` is fed to encoder and decoder;
the decoder hidden state at the final ``</s>`` goes through a small head
(dense, tanh, projection), as in BART's classification setup.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..subword import BOS, EOS, SEP, TokenSequence
from .config import TrainConfig
from .layers import cross_entropy_bwd, cross_entropy_fwd, linear_bwd, linear_fwd, softmax
from .train import StepRecord, run_training
from .transformer import ModelParameters, decode, decode_bwd, encode, encode_bwd, pad_ids

HEAD_NAMES = ("cls.dense.w", "cls.dense.b", "cls.out.w", "cls.out.b")


@dataclass
class ClassificationHead:
    tensors: dict[str, np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.tensors["cls.out.w"].shape[1]

    @classmethod
    def init(cls, hidden_dim: int, num_classes: int, seed: int = 0, dtype=np.float32) -> "ClassificationHead":
        rng = np.random.default_rng(seed)
        s1 = math.sqrt(6.0 / (2 * hidden_dim))
        s2 = math.sqrt(6.0 / (hidden_dim + num_classes))
        return cls({
            "cls.dense.w": rng.uniform(-s1, s1, (hidden_dim, hidden_dim)).astype(dtype),
            "cls.dense.b": np.zeros(hidden_dim, dtype),
            "cls.out.w": rng.uniform(-s2, s2, (hidden_dim, num_classes)).astype(dtype),
            "cls.out.b": np.zeros(num_classes, dtype),
        })

    @classmethod
    def zeros(cls, hidden_dim: int, num_classes: int, dtype=np.float32) -> "ClassificationHead":
        head = cls.init(hidden_dim, num_classes, dtype=dtype)
        head.tensors["cls.out.w"][:] = 0
        return head


def _ids(seq) -> tuple[int, ...]:
    if seq is None:
        return ()
    return tuple(seq.ids) if isinstance(seq, TokenSequence) else tuple(seq)


def join_inputs(seq_a, seq_b=None) -> tuple[int, ...]:
    """``<s> a </s>`` or ``<s> a <sep> b </s>``."""
    a, b = _ids(seq_a), _ids(seq_b)
    if not a and not b:
        raise ValueError("classification input is empty")
    body = a + ((SEP,) + b if seq_b is not None else ())
    return (BOS, *body, EOS)


def _forward(params: ModelParameters, head: ClassificationHead, seqs: Sequence[Sequence[int]], dropout=0.0, rng=None):
    ids, mask = pad_ids(seqs)
    enc, enc_c = encode(params, ids, mask, dropout, rng)
    hid, dec_c = decode(params, ids, mask, enc, mask, dropout, rng)
    last = mask.sum(axis=1) - 1
    h = hid[np.arange(len(seqs)), last]
    t = head.tensors
    z, _ = linear_fwd(h, t["cls.dense.w"], t["cls.dense.b"])
    a = np.tanh(z)
    logits, _ = linear_fwd(a, t["cls.out.w"], t["cls.out.b"])
    return logits, (hid, last, h, a, enc_c, dec_c)


def classify(params: ModelParameters, seq_a, seq_b=None, head: ClassificationHead | None = None) -> np.ndarray:
    """Label distribution for one input (or input pair)."""
    if head is None:
        raise ValueError("a classification head is required")
    logits, _ = _forward(params, head, [join_inputs(seq_a, seq_b)])
    return softmax(logits[0].astype(np.float64))


def predict(params: ModelParameters, head: ClassificationHead, seqs: Sequence[Sequence[int]], batch_size: int = 64) -> np.ndarray:
    preds = []
    for i in range(0, len(seqs), batch_size):
        logits, _ = _forward(params, head, seqs[i : i + batch_size])
        preds.append(logits.argmax(axis=-1))
    return np.concatenate(preds)


def loss_and_grads(params, head, seqs, labels, dropout=0.0, rng=None):
    logits, (hid, last, h, a, enc_c, dec_c) = _forward(params, head, seqs, dropout, rng)
    loss, ce = cross_entropy_fwd(logits, np.asarray(labels))
    t = head.tensors
    grads = params.zeros_like()
    dlogits = cross_entropy_bwd(ce).astype(hid.dtype)
    da, dwo, dbo = linear_bwd(dlogits, a, t["cls.out.w"])
    dz = da * (1 - a * a)
    dh, dwd, dbd = linear_bwd(dz, h, t["cls.dense.w"])
    grads.update({"cls.out.w": dwo, "cls.out.b": dbo, "cls.dense.w": dwd, "cls.dense.b": dbd})
    dhid = np.zeros_like(hid)
    dhid[np.arange(len(seqs)), last] = dh
    denc = decode_bwd(dhid, dec_c, params, grads)
    encode_bwd(denc, enc_c, params, grads)
    return loss, grads


def finetune_classifier(
    params: ModelParameters,
    head: ClassificationHead,
    examples: Sequence[tuple[Sequence[int], int]],
    train_config: TrainConfig,
) -> tuple[ModelParameters, ClassificationHead, list[StepRecord]]:
    """Fine-tune encoder, decoder and head jointly. ``examples`` hold already
    joined id sequences (see ``join_inputs``) with integer labels."""
    params = params.copy()
    head = ClassificationHead({k: v.copy() for k, v in head.tensors.items()})
    seqs = [tuple(s) for s, _ in examples]

    def step_fn(batch, p_drop, rng):
        return loss_and_grads(params, head, [tuple(s) for s, _ in batch], [y for _, y in batch], p_drop, rng)

    curve = run_training(params, list(examples), train_config, [len(s) for s in seqs], step_fn, head.tensors)
    return params, head, curve
