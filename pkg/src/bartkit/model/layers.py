"""Forward/backward primitives. Each ``*_fwd`` returns ``(out, cache)`` and the
matching ``*_bwd`` takes ``(dout, cache)``. Everything follows the dtype of
its inputs so the same code serves float32 training and float64 checks.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

NEG_INF = -1e9


def _sum_leading(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def linear_fwd(x, w, b):
    return x @ w + b, x


def linear_bwd(dy, x, w):
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    return dx, dw, _sum_leading(dy)


def layer_norm_fwd(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layer_norm_bwd(dy, cache):
    xhat, rstd, g = cache
    dg = _sum_leading(dy * xhat)
    db = _sum_leading(dy)
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_bwd(dy, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dy * (cdf + x * pdf)


def relu_fwd(x):
    return np.maximum(x, 0), x > 0


def relu_bwd(dy, cache):
    return dy * cache


ACTIVATIONS = {"gelu": (gelu_fwd, gelu_bwd), "relu": (relu_fwd, relu_bwd)}


def dropout_fwd(x, p, rng):
    if p <= 0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return x * keep, keep


def dropout_bwd(dy, cache):
    return dy if cache is None else dy * cache


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _split_heads(x, heads):
    B, T, d = x.shape
    return x.reshape(B, T, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def attention_fwd(xq, xkv, p, prefix, heads, bias):
    """Multi-head attention. ``bias`` broadcasts to (B, H, Tq, Tk) and holds 0
    for allowed and ``NEG_INF`` for masked positions."""
    q_lin, _ = linear_fwd(xq, p[f"{prefix}.q.w"], p[f"{prefix}.q.b"])
    k_lin, _ = linear_fwd(xkv, p[f"{prefix}.k.w"], p[f"{prefix}.k.b"])
    v_lin, _ = linear_fwd(xkv, p[f"{prefix}.v.w"], p[f"{prefix}.v.b"])
    q, k, v = (_split_heads(t, heads) for t in (q_lin, k_lin, v_lin))
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale + bias
    probs = softmax(scores)
    ctx = _merge_heads(probs @ v)
    out, _ = linear_fwd(ctx, p[f"{prefix}.o.w"], p[f"{prefix}.o.b"])
    return out, (xq, xkv, q, k, v, probs, ctx, scale)


def attention_bwd(dout, cache, p, prefix, heads, grads):
    """Returns (dxq, dxkv) and accumulates weight gradients into ``grads``."""
    xq, xkv, q, k, v, probs, ctx, scale = cache
    dctx, dwo, dbo = linear_bwd(dout, ctx, p[f"{prefix}.o.w"])
    grads[f"{prefix}.o.w"] += dwo
    grads[f"{prefix}.o.b"] += dbo
    dctx = _split_heads(dctx, heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
    dxq, dwq, dbq = linear_bwd(_merge_heads(dq), xq, p[f"{prefix}.q.w"])
    dxk, dwk, dbk = linear_bwd(_merge_heads(dk), xkv, p[f"{prefix}.k.w"])
    dxv, dwv, dbv = linear_bwd(_merge_heads(dv), xkv, p[f"{prefix}.v.w"])
    for name, g in (("q.w", dwq), ("q.b", dbq), ("k.w", dwk), ("k.b", dbk), ("v.w", dwv), ("v.b", dbv)):
        grads[f"{prefix}.{name}"] += g
    return dxq, dxk + dxv


def cross_entropy_fwd(logits, labels, ignore_index=-1):
    """Mean negative log-likelihood over positions whose label != ignore_index."""
    logp = log_softmax(logits)
    valid = labels != ignore_index
    count = max(int(valid.sum()), 1)
    safe = np.where(valid, labels, 0)
    nll = -np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = float((nll * valid).sum() / count)
    return loss, (logp, safe, valid, count)


def cross_entropy_bwd(cache):
    logp, safe, valid, count = cache
    d = np.exp(logp)
    np.put_along_axis(d, safe[..., None], np.take_along_axis(d, safe[..., None], axis=-1) - 1, axis=-1)
    d *= (valid / count)[..., None].astype(d.dtype)
    return d
