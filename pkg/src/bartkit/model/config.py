from __future__ import annotations

import math
from dataclasses import asdict, dataclass

TYING_MODES = ("all", "decoder", "none")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs for the encoder-decoder transformer.

    ``embedding_tying`` controls how many token-embedding tensors exist:
    ``all`` shares one matrix between encoder input, decoder input and output
    projection; ``decoder`` ties only decoder input and output; ``none`` keeps
    three separate matrices.
    """

    vocab_size: int = 1000
    enc_layers: int = 2
    dec_layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    ffn_dim: int = 0  # 0 means 4 * hidden_dim
    activation: str = "gelu"
    top_layernorm: bool = True
    dropout: float = 0.1
    max_positions: int = 256
    embedding_tying: str = "all"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.embedding_tying not in TYING_MODES:
            raise ValueError(f"embedding_tying must be one of {TYING_MODES}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden_dim)

    @classmethod
    def paper_base(cls, vocab_size: int = 50000) -> "ModelConfig":
        """6+6 layers, 768 hidden, 12 heads; three embedding matrices."""
        return cls(vocab_size=vocab_size, enc_layers=6, dec_layers=6, hidden_dim=768, heads=12,
                   ffn_dim=3072, max_positions=1024, embedding_tying="none")

    @classmethod
    def mbart_large(cls, vocab_size: int = 250027) -> "ModelConfig":
        """12+12 layers, 1024 hidden, 16 heads; separate encoder embedding,
        decoder embedding tied to the output projection."""
        return cls(vocab_size=vocab_size, enc_layers=12, dec_layers=12, hidden_dim=1024, heads=16,
                   ffn_dim=4096, max_positions=1024, embedding_tying="decoder")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def enc_embed_name(self) -> str:
        return "embed.tokens" if self.embedding_tying == "all" else "encoder.embed.tokens"

    @property
    def dec_embed_name(self) -> str:
        return "embed.tokens" if self.embedding_tying == "all" else "decoder.embed.tokens"

    @property
    def out_proj_name(self) -> str:
        return "output.proj" if self.embedding_tying == "none" else self.dec_embed_name

    @property
    def embedding_names(self) -> tuple[str, ...]:
        """Distinct tensors with one row per vocabulary id."""
        return tuple(dict.fromkeys([self.enc_embed_name, self.dec_embed_name, self.out_proj_name]))

    def replace(self, **changes) -> "ModelConfig":
        d = asdict(self)
        d.update(changes)
        return ModelConfig(**d)

    def to_json(self) -> dict:
        return asdict(self)


def _attn_shapes(prefix: str, d: int) -> dict:
    out = {}
    for proj in ("q", "k", "v", "o"):
        out[f"{prefix}.{proj}.w"] = (d, d)
        out[f"{prefix}.{proj}.b"] = (d,)
    return out


def _ln_shapes(prefix: str, d: int) -> dict:
    return {f"{prefix}.g": (d,), f"{prefix}.b": (d,)}


def _ffn_shapes(prefix: str, d: int, f: int) -> dict:
    return {f"{prefix}.fc1.w": (d, f), f"{prefix}.fc1.b": (f,), f"{prefix}.fc2.w": (f, d), f"{prefix}.fc2.b": (d,)}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor, in a fixed order."""
    d, f, V, P = config.hidden_dim, config.ffn_dim, config.vocab_size, config.max_positions
    shapes: dict[str, tuple[int, ...]] = {}
    for name in config.embedding_names:
        shapes[name] = (V, d)
    for side in ("encoder", "decoder"):
        shapes[f"{side}.embed.positions"] = (P, d)
        shapes.update(_ln_shapes(f"{side}.embed.ln", d))
    for i in range(config.enc_layers):
        p = f"encoder.layers.{i}"
        shapes.update(_ln_shapes(f"{p}.self_attn_ln", d))
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes.update(_ln_shapes(f"{p}.ffn_ln", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
    for i in range(config.dec_layers):
        p = f"decoder.layers.{i}"
        shapes.update(_ln_shapes(f"{p}.self_attn_ln", d))
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes.update(_ln_shapes(f"{p}.cross_attn_ln", d))
        shapes.update(_attn_shapes(f"{p}.cross_attn", d))
        shapes.update(_ln_shapes(f"{p}.ffn_ln", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
    if config.top_layernorm:
        shapes.update(_ln_shapes("encoder.final_ln", d))
        shapes.update(_ln_shapes("decoder.final_ln", d))
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 6e-4
    warmup_fraction: float = 0.06
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    epochs: int = 20
    dropout_stages: tuple[tuple[float, float], ...] = ((0.6, 0.1), (0.2, 0.05), (0.2, 0.0))
    batch_tokens: int = 2048
    clip_norm: float = 0.0  # 0 disables clipping
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in (0, 1)")
        stages = tuple(tuple(map(float, s)) for s in self.dropout_stages)
        object.__setattr__(self, "dropout_stages", stages)
        if not stages or abs(sum(s[0] for s in stages) - 1.0) > 1e-9:
            raise ValueError("dropout_stages fractions must sum to 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["dropout_stages"] = [list(s) for s in self.dropout_stages]
        return d
