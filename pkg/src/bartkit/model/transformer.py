"""Pre-norm encoder-decoder transformer in numpy with hand-written backprop.

Layout follows BART/mBART: learned absolute positions, a layer norm on the
embeddings, pre-norm residual blocks, GeLU feed-forward, and an optional
final layer norm on top of both encoder and decoder stacks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..subword import PAD
from .config import ModelConfig, param_count, param_shapes
from .layers import (
    ACTIVATIONS,
    NEG_INF,
    attention_bwd,
    attention_fwd,
    cross_entropy_bwd,
    cross_entropy_fwd,
    dropout_bwd,
    dropout_fwd,
    layer_norm_bwd,
    layer_norm_fwd,
    linear_bwd,
    linear_fwd,
)

IGNORE = -1


class SequenceTooLong(ValueError):
    pass


@dataclass
class ModelParameters:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParameters:
    """Weights and embeddings ~ U(-s, s), s = sqrt(6 / (fan_in + fan_out));
    biases 0; layer-norm gains 1. Drawn in float64, then cast."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            s = math.sqrt(6.0 / (shape[0] + shape[1]))
            t = rng.uniform(-s, s, size=shape)
        elif name.endswith(".g"):
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        tensors[name] = t.astype(dtype)
    params = ModelParameters(config, tensors)
    assert params.param_count == param_count(config)
    return params


@dataclass
class Batch:
    src: np.ndarray  # (B, S) token ids, PAD-padded
    src_mask: np.ndarray  # (B, S) True on real tokens
    dec_in: np.ndarray  # (B, T)
    dec_mask: np.ndarray
    labels: np.ndarray  # (B, T), IGNORE on padding

    @property
    def num_tokens(self) -> int:
        return int((self.labels != IGNORE).sum())


def pad_ids(seqs: Sequence[Sequence[int]], pad: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def collate(pairs) -> Batch:
    """Teacher-forcing batch: decoder reads target[:-1] and predicts target[1:]."""
    srcs = [tuple(p.source.ids) for p in pairs]
    tgts = [tuple(p.target.ids) for p in pairs]
    if any(len(t) < 2 for t in tgts):
        raise ValueError("targets need at least two tokens (BOS ... EOS)")
    src, src_mask = pad_ids(srcs)
    dec_in, dec_mask = pad_ids([t[:-1] for t in tgts])
    labels, lab_mask = pad_ids([t[1:] for t in tgts])
    labels[~lab_mask] = IGNORE
    return Batch(src, src_mask, dec_in, dec_mask, labels)


def key_bias(mask: np.ndarray, dtype) -> np.ndarray:
    return np.where(mask, 0.0, NEG_INF).astype(dtype)[:, None, None, :]


def causal_bias(T: int, dtype) -> np.ndarray:
    return np.triu(np.full((T, T), NEG_INF), k=1).astype(dtype)[None, None]


# -- forward ------------------------------------------------------------------


def _embed_fwd(params, ids, side, embed_name, dropout, rng):
    cfg = params.config
    T = ids.shape[1]
    if T > cfg.max_positions:
        raise SequenceTooLong(f"{side} length {T} exceeds max_positions {cfg.max_positions}")
    x = params[embed_name][ids] + params[f"{side}.embed.positions"][:T]
    x, ln = layer_norm_fwd(x, params[f"{side}.embed.ln.g"], params[f"{side}.embed.ln.b"], cfg.ln_eps)
    x, dr = dropout_fwd(x, dropout, rng)
    return x, (ids, ln, dr)


def _embed_bwd(dx, cache, params, side, embed_name, grads):
    ids, ln, dr = cache
    dx = dropout_bwd(dx, dr)
    dx, dg, db = layer_norm_bwd(dx, ln)
    grads[f"{side}.embed.ln.g"] += dg
    grads[f"{side}.embed.ln.b"] += db
    grads[f"{side}.embed.positions"][: ids.shape[1]] += dx.sum(axis=0)
    np.add.at(grads[embed_name], ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))


def _ln(params, prefix, x):
    return layer_norm_fwd(x, params[f"{prefix}.g"], params[f"{prefix}.b"], params.config.ln_eps)


def _ln_bwd(dy, cache, prefix, grads):
    dx, dg, db = layer_norm_bwd(dy, cache)
    grads[f"{prefix}.g"] += dg
    grads[f"{prefix}.b"] += db
    return dx


def _ffn_fwd(params, prefix, x, dropout, rng):
    act_fwd, _ = ACTIVATIONS[params.config.activation]
    h, _ = linear_fwd(x, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"])
    a, act_c = act_fwd(h)
    y, _ = linear_fwd(a, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"])
    y, dr = dropout_fwd(y, dropout, rng)
    return y, (x, a, act_c, dr)


def _ffn_bwd(dy, cache, params, prefix, grads):
    _, act_bwd = ACTIVATIONS[params.config.activation]
    x, a, act_c, dr = cache
    dy = dropout_bwd(dy, dr)
    da, dw2, db2 = linear_bwd(dy, a, params[f"{prefix}.fc2.w"])
    dh = act_bwd(da, act_c)
    dx, dw1, db1 = linear_bwd(dh, x, params[f"{prefix}.fc1.w"])
    grads[f"{prefix}.fc2.w"] += dw2
    grads[f"{prefix}.fc2.b"] += db2
    grads[f"{prefix}.fc1.w"] += dw1
    grads[f"{prefix}.fc1.b"] += db1
    return dx


def _attn_block_fwd(params, prefix, x, kv, bias, dropout, rng, self_attn):
    h, ln = _ln(params, f"{prefix}_ln", x)
    a, att = attention_fwd(h, h if self_attn else kv, params.tensors, prefix, params.config.heads, bias)
    a, dr = dropout_fwd(a, dropout, rng)
    return x + a, (ln, att, dr)


def _attn_block_bwd(dx, cache, params, prefix, grads, self_attn):
    ln, att, dr = cache
    da = dropout_bwd(dx, dr)
    dq, dkv = attention_bwd(da, att, params.tensors, prefix, params.config.heads, grads)
    if self_attn:
        return dx + _ln_bwd(dq + dkv, ln, f"{prefix}_ln", grads), None
    return dx + _ln_bwd(dq, ln, f"{prefix}_ln", grads), dkv


def _ffn_block_fwd(params, prefix, x, dropout, rng):
    h, ln = _ln(params, f"{prefix}.ffn_ln", x)
    y, ffn = _ffn_fwd(params, f"{prefix}.ffn", h, dropout, rng)
    return x + y, (ln, ffn)


def _ffn_block_bwd(dx, cache, params, prefix, grads):
    ln, ffn = cache
    dh = _ffn_bwd(dx, ffn, params, f"{prefix}.ffn", grads)
    return dx + _ln_bwd(dh, ln, f"{prefix}.ffn_ln", grads)


def encode(params: ModelParameters, src, src_mask, dropout=0.0, rng=None):
    cfg = params.config
    x, emb = _embed_fwd(params, src, "encoder", cfg.enc_embed_name, dropout, rng)
    bias = key_bias(src_mask, x.dtype)
    layers = []
    for i in range(cfg.enc_layers):
        p = f"encoder.layers.{i}"
        x, c1 = _attn_block_fwd(params, f"{p}.self_attn", x, None, bias, dropout, rng, True)
        x, c2 = _ffn_block_fwd(params, p, x, dropout, rng)
        layers.append((c1, c2))
    top = None
    if cfg.top_layernorm:
        x, top = _ln(params, "encoder.final_ln", x)
    return x, (emb, layers, top)


def encode_bwd(dx, cache, params, grads):
    cfg = params.config
    emb, layers, top = cache
    if cfg.top_layernorm:
        dx = _ln_bwd(dx, top, "encoder.final_ln", grads)
    for i in reversed(range(cfg.enc_layers)):
        p = f"encoder.layers.{i}"
        c1, c2 = layers[i]
        dx = _ffn_block_bwd(dx, c2, params, p, grads)
        dx, _ = _attn_block_bwd(dx, c1, params, f"{p}.self_attn", grads, True)
    _embed_bwd(dx, emb, params, "encoder", cfg.enc_embed_name, grads)


def decode(params: ModelParameters, dec_in, dec_mask, enc_out, src_mask, dropout=0.0, rng=None):
    """Decoder hidden states (B, T, d); position t sees dec_in[:, :t+1] only."""
    cfg = params.config
    x, emb = _embed_fwd(params, dec_in, "decoder", cfg.dec_embed_name, dropout, rng)
    T = dec_in.shape[1]
    self_bias = causal_bias(T, x.dtype) + key_bias(dec_mask, x.dtype)
    cross_bias = key_bias(src_mask, x.dtype)
    layers = []
    for i in range(cfg.dec_layers):
        p = f"decoder.layers.{i}"
        x, c1 = _attn_block_fwd(params, f"{p}.self_attn", x, None, self_bias, dropout, rng, True)
        x, c2 = _attn_block_fwd(params, f"{p}.cross_attn", x, enc_out, cross_bias, dropout, rng, False)
        x, c3 = _ffn_block_fwd(params, p, x, dropout, rng)
        layers.append((c1, c2, c3))
    top = None
    if cfg.top_layernorm:
        x, top = _ln(params, "decoder.final_ln", x)
    return x, (emb, layers, top)


def decode_bwd(dx, cache, params, grads):
    """Backprop through the decoder; returns the gradient w.r.t. encoder output."""
    cfg = params.config
    emb, layers, top = cache
    if cfg.top_layernorm:
        dx = _ln_bwd(dx, top, "decoder.final_ln", grads)
    denc = 0.0
    for i in reversed(range(cfg.dec_layers)):
        p = f"decoder.layers.{i}"
        c1, c2, c3 = layers[i]
        dx = _ffn_block_bwd(dx, c3, params, p, grads)
        dx, dkv = _attn_block_bwd(dx, c2, params, f"{p}.cross_attn", grads, False)
        denc = denc + dkv
        dx, _ = _attn_block_bwd(dx, c1, params, f"{p}.self_attn", grads, True)
    _embed_bwd(dx, emb, params, "decoder", cfg.dec_embed_name, grads)
    return denc


def output_logits(params: ModelParameters, hidden: np.ndarray) -> np.ndarray:
    return hidden @ params[params.config.out_proj_name].T


def _output_bwd(dlogits, hidden, params, grads):
    W = params[params.config.out_proj_name]
    grads[params.config.out_proj_name] += dlogits.reshape(-1, W.shape[0]).T @ hidden.reshape(-1, W.shape[1])
    return dlogits @ W


def batch_logits(params: ModelParameters, batch: Batch) -> np.ndarray:
    enc, _ = encode(params, batch.src, batch.src_mask)
    hid, _ = decode(params, batch.dec_in, batch.dec_mask, enc, batch.src_mask)
    return output_logits(params, hid)


def loss_and_grads(params: ModelParameters, batch: Batch, dropout: float = 0.0, rng=None):
    """Token-mean cross-entropy of the batch and its gradient for every tensor."""
    enc, enc_c = encode(params, batch.src, batch.src_mask, dropout, rng)
    hid, dec_c = decode(params, batch.dec_in, batch.dec_mask, enc, batch.src_mask, dropout, rng)
    logits = output_logits(params, hid)
    loss, ce = cross_entropy_fwd(logits, batch.labels, IGNORE)
    grads = params.zeros_like()
    dlogits = cross_entropy_bwd(ce).astype(hid.dtype)
    dhid = _output_bwd(dlogits, hid, params, grads)
    denc = decode_bwd(dhid, dec_c, params, grads)
    encode_bwd(denc, enc_c, params, grads)
    return loss, grads, logits


def batch_loss(params: ModelParameters, batch: Batch) -> float:
    loss, _ = cross_entropy_fwd(batch_logits(params, batch), batch.labels, IGNORE)
    return loss


def forward_loss(params: ModelParameters, pair) -> tuple[float, np.ndarray]:
    """Mean per-token NLL of ``pair.target`` given ``pair.source``.

    Returns ``(loss, logits)`` with logits of shape ``(len(target) - 1, V)``;
    row ``r`` scores ``target[r + 1]`` from ``target[: r + 1]``.
    """
    batch = collate([pair])
    logits = batch_logits(params, batch)
    loss, _ = cross_entropy_fwd(logits, batch.labels, IGNORE)
    return loss, logits[0]


# -- gradient check -----------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_coords: int
    per_tensor: dict[str, float] = field(default_factory=dict)
    worst: tuple = ()
    skipped_kinks: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance

    def to_json(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "n_coords": self.n_coords,
            "per_tensor": self.per_tensor,
            "worst": list(self.worst),
            "skipped_kinks": self.skipped_kinks,
        }


def _sample_coords(params: ModelParameters, batch: Batch, n_coords: int, rng) -> list[tuple[str, tuple]]:
    cfg = params.config
    names = list(params.tensors)
    per = max(1, math.ceil(n_coords / len(names)))
    used = np.unique(np.concatenate([batch.src.ravel(), batch.dec_in.ravel(), batch.labels[batch.labels >= 0]]))
    lengths = {"encoder": batch.src.shape[1], "decoder": batch.dec_in.shape[1]}
    coords = []
    for name in names:
        shape = params[name].shape
        for _ in range(per):
            if name in cfg.embedding_names:
                idx = (int(rng.choice(used)), int(rng.integers(shape[1])))
            elif name.endswith("embed.positions"):
                idx = (int(rng.integers(lengths[name.split(".")[0]])), int(rng.integers(shape[1])))
            else:
                idx = tuple(int(rng.integers(s)) for s in shape)
            coords.append((name, idx))
    return coords


def _relu_pattern(params: ModelParameters, batch: Batch) -> np.ndarray:
    """Concatenated ReLU on/off masks of every feed-forward block."""
    enc, (_, enc_layers, _) = encode(params, batch.src, batch.src_mask)
    _, (_, dec_layers, _) = decode(params, batch.dec_in, batch.dec_mask, enc, batch.src_mask)
    masks = [c[-1][1][2] for c in enc_layers] + [c[-1][1][2] for c in dec_layers]
    return np.concatenate([m.ravel() for m in masks])


def grad_check(
    params: ModelParameters, pair, n_coords: int = 100, seed: int = 0, h: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    At least ``n_coords`` coordinates are drawn, spread evenly over every
    tensor (embedding rows restricted to ids present in the pair). Relative
    error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps structurally
    zero gradients (e.g. key biases, which softmax ignores) from turning
    round-off into a large ratio. The numeric estimate Richardson-extrapolates
    central differences at ``h`` and ``h/2`` so that truncation error is
    O(h^4) and does not swamp small gradients. Dropout is off. With ReLU, a
    coordinate whose stencil flips any unit's on/off state is redrawn, since
    the loss is not differentiable across the kink.
    """
    p64 = params.astype(np.float64)
    batch = collate([pair])
    _, grads, _ = loss_and_grads(p64, batch)
    rng = np.random.default_rng(seed)
    relu = p64.config.activation == "relu"
    per_tensor: dict[str, float] = {}
    worst = ("", (), 0.0, 0.0)
    max_err = 0.0
    checked = kinks = 0
    for name, idx in _sample_coords(p64, batch, n_coords, rng):
        t = p64.tensors[name]
        orig = t[idx]
        for _ in range(20):
            losses, patterns = [], []
            for step in (h, -h, h / 2, -h / 2):
                t[idx] = orig + step
                losses.append(batch_loss(p64, batch))
                if relu:
                    patterns.append(_relu_pattern(p64, batch))
            t[idx] = orig
            if not relu or all(np.array_equal(patterns[0], q) for q in patterns[1:]):
                break
            kinks += 1
            idx = tuple(int(rng.integers(s)) for s in t.shape)
            orig = t[idx]
        else:
            continue
        wide = (losses[0] - losses[1]) / (2 * h)
        narrow = (losses[2] - losses[3]) / h
        numeric = (4 * narrow - wide) / 3
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        checked += 1
        per_tensor[name] = max(per_tensor.get(name, 0.0), err)
        if err > max_err:
            max_err = err
            worst = (name, idx, analytic, numeric)
    return GradCheckReport(max_err, checked, per_tensor, worst, kinks)
