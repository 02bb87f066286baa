"""Adam with linear warmup / linear decay, staged dropout, and the training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ModelConfig, TrainConfig
from .transformer import ModelParameters, collate, init_model, loss_and_grads

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    return max(1, round(warmup_fraction * total_steps))


def learning_rate(step: int, total_steps: int, warmup: int, peak_lr: float) -> float:
    """Linear rise to ``peak_lr`` at step ``warmup``, then linear decay to 0 at
    ``total_steps``. Steps are 1-based."""
    if step <= warmup:
        return peak_lr * step / warmup
    if total_steps == warmup:
        return peak_lr
    return peak_lr * max(0.0, (total_steps - step) / (total_steps - warmup))


def stage_boundaries(stages: Sequence[tuple[float, float]], epochs: int) -> list[int]:
    """Last epoch (1-based, inclusive) of each dropout stage."""
    out, acc = [], 0.0
    for frac, _ in stages:
        acc += frac
        out.append(round(acc * epochs))
    out[-1] = epochs
    return out


def dropout_for_epoch(epoch: int, stages: Sequence[tuple[float, float]], epochs: int) -> float:
    for last, (_, p) in zip(stage_boundaries(stages, epochs), stages):
        if epoch <= last:
            return p
    return stages[-1][1]


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-6):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def make_batches(lengths: Sequence[int], batch_tokens: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, then pack greedily so that ``len(batch) * max_len <= batch_tokens``
    (a single over-long example still forms its own batch)."""
    order = rng.permutation(len(lengths))
    batches, cur, cur_max = [], [], 0
    for i in order:
        L = lengths[i]
        new_max = max(cur_max, L)
        if cur and new_max * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, new_max = [], L
        cur.append(int(i))
        cur_max = new_max
    if cur:
        batches.append(cur)
    return batches


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    dropout: float
    loss: float


def plan_epochs(lengths, train_config: TrainConfig) -> list[list[list[int]]]:
    rng = np.random.default_rng([train_config.seed, 1])
    return [make_batches(lengths, train_config.batch_tokens, rng) for _ in range(train_config.epochs)]


def run_training(
    params: ModelParameters,
    examples: Sequence,
    train_config: TrainConfig,
    lengths: Sequence[int],
    step_fn: Callable,
    extra: dict[str, np.ndarray] | None = None,
) -> list[StepRecord]:
    """Shared optimisation loop.

    ``step_fn(examples_in_batch, dropout, rng)`` returns ``(loss, grads)``
    where grads covers ``params.tensors`` and ``extra`` (if given). Both are
    updated in place.
    """
    plan = plan_epochs(lengths, train_config)
    total = sum(len(e) for e in plan)
    warm = warmup_steps(total, train_config.warmup_fraction)
    tensors = dict(params.tensors)
    if extra:
        tensors.update(extra)
    opt = Adam(tensors, train_config.adam_beta1, train_config.adam_beta2, train_config.adam_eps)
    drop_rng = np.random.default_rng([train_config.seed, 2])
    curve: list[StepRecord] = []
    step = 0
    for epoch, batches in enumerate(plan, start=1):
        p_drop = dropout_for_epoch(epoch, train_config.dropout_stages, train_config.epochs)
        for idx in batches:
            step += 1
            lr = learning_rate(step, total, warm, train_config.peak_lr)
            loss, grads = step_fn([examples[i] for i in idx], p_drop, drop_rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(step, loss)
            if train_config.clip_norm > 0:
                clip_grads(grads, train_config.clip_norm)
            opt.step(tensors, grads, lr)
            curve.append(StepRecord(step, epoch, lr, p_drop, loss))
        log.info("epoch %d/%d  dropout %.2f  loss %.4f", epoch, train_config.epochs, p_drop, curve[-1].loss)
    return curve


def train(
    pairs: Sequence,
    model_config: ModelConfig,
    train_config: TrainConfig,
    init: ModelParameters | None = None,
) -> tuple[ModelParameters, list[StepRecord]]:
    """Denoising (or any seq2seq) training with teacher forcing.

    Deterministic given ``train_config.seed`` (batching, dropout masks) and the
    initial parameters (``init_model(model_config, seed)`` when ``init`` is None).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty training corpus")
    params = init.copy() if init is not None else init_model(model_config, train_config.seed)
    lengths = [max(len(p.source), len(p.target)) for p in pairs]

    def step_fn(batch_pairs, p_drop, rng):
        loss, grads, _ = loss_and_grads(params, collate(batch_pairs), p_drop, rng)
        return loss, grads

    curve = run_training(params, pairs, train_config, lengths, step_fn)
    return params, curve


def smoothed(losses: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; entry i averages losses[max(0, i-window+1) : i+1]."""
    x = np.asarray(losses, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(1, len(x) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


def write_loss_curve(curve: Sequence[StepRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "lr", "dropout", "loss"])
        for r in curve:
            w.writerow([r.step, repr(r.lr), repr(r.dropout), repr(r.loss)])


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(
    params: ModelParameters, directory: str | Path, extra: dict[str, np.ndarray] | None = None,
    metadata: dict | None = None,
) -> Path:
    """Write ``manifest.json`` plus ``tensors.bin`` (raw little-endian blobs)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    tensors = dict(params.tensors)
    for k, v in (extra or {}).items():
        tensors[k] = v
    with open(directory / "tensors.bin", "wb") as f:
        for name, t in tensors.items():
            dt = t.dtype.newbyteorder("<")
            blob = np.ascontiguousarray(t, dtype=dt).tobytes()
            f.write(blob)
            entries.append({"name": name, "shape": list(t.shape), "dtype": dt.str, "offset": offset,
                            "nbytes": len(blob), "extra": name not in params.tensors})
            offset += len(blob)
    manifest = {
        "format": "bartkit-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_json(),
        "tensors": entries,
        "metadata": metadata or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ModelParameters, dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "bartkit-checkpoint" or manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{directory}: unsupported checkpoint")
    data = (directory / "tensors.bin").read_bytes()
    tensors, extra = {}, {}
    for e in manifest["tensors"]:
        arr = np.frombuffer(data, dtype=np.dtype(e["dtype"]), count=math.prod(e["shape"]) if e["shape"] else 1,
                            offset=e["offset"]).reshape(e["shape"]).copy()
        (extra if e["extra"] else tensors)[e["name"]] = arr
    return ModelParameters(ModelConfig(**manifest["config"]), tensors), extra, manifest.get("metadata", {})
