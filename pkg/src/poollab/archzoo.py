"""The six sequence-pooling architectures as composable blocks.

Kinds:
  BERT  post-norm transformer encoder, softmax attention, trained with
        learning-rate warmup and gradient clipping.
  MTE   modified encoder: normalization moved before the residual adds,
        extra normalizations on hidden layers, extra GELU in the attention
        path, plain linear-decay training.
  NAP   MTE with softmax replaced by mean/std standardization of the
        logits with one trainable scalar gain/bias pair per head.
  NON   MTE with raw logits as attention weights, scaled by 1/sqrt(N) and
        passed through GELU (no online normalization).
  SUM   attention sub-module replaced by sum-reduce-broadcast.
  MAX   attention sub-module replaced by max-reduce-broadcast.

Ablation flags on `ArchVariant` realize the ladder from BERT to MTE
(-warmup, -grad clip, +normalize, +GELU); for the non-BERT kinds they are
fixed at the MTE settings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ConfigError
from . import gradcore as gc
from .gradcore import Tensor

EPS = 1e-6

KINDS = ("BERT", "MTE", "NAP", "NON", "SUM", "MAX")
ATTENTION_KINDS = ("BERT", "MTE", "NAP", "NON")
HEADS = ("per_token", "first_token", "mode")


@dataclass(frozen=True)
class ArchVariant:
    kind: str
    use_warmup: bool | None = None
    use_grad_clip: bool | None = None
    pre_residual_norm: bool | None = None
    extra_gelu: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        bert = self.kind == "BERT"
        defaults = (bert, bert, not bert, not bert)
        names = ("use_warmup", "use_grad_clip", "pre_residual_norm", "extra_gelu")
        for name, default in zip(names, defaults):
            value = getattr(self, name)
            if value is None:
                object.__setattr__(self, name, default)
            elif not bert and value != default:
                raise ConfigError(
                    f"{name}={value} is only valid on the BERT ablation ladder")


@dataclass
class ModelConfig:
    d: int = 128
    M: int = 4
    L: int = 2
    N_max: int = 128
    S: int = 100
    variant: ArchVariant = field(default_factory=lambda: ArchVariant("NAP"))
    head: str = "per_token"
    use_positional: bool | None = None
    dropout: float = 0.0
    precision: str = "f64"
    ffn_hidden: int = field(init=False)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"unknown head kind {self.head!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if min(self.d, self.M, self.L, self.N_max, self.S) < 1:
            raise ConfigError("d, M, L, N_max, S must all be positive")
        if self.variant.kind in ATTENTION_KINDS and self.d % self.M != 0:
            raise ConfigError(
                f"model dimension {self.d} not divisible by {self.M} heads")
        if self.use_positional is None:
            self.use_positional = self.head != "mode"
        # sum/max have no attention affines; a wider hidden layer keeps the
        # total parameter count within 5% of the attention variants
        self.ffn_hidden = 6 * self.d if self.variant.kind in ("SUM", "MAX") else 4 * self.d

    @property
    def d_head(self) -> int:
        return self.d // self.M

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


class Model:
    """Materialized parameter set for one config; params is ordered by build."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self):
        return list(self.params.items())

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def clone(self) -> "Model":
        return Model(self.config,
                     {k: Tensor(v.data.copy()) for k, v in self.params.items()})


def attention_weight_count(d: int) -> int:
    """Weights+biases of the four d-to-d affines (query, key, value, mix)."""
    return 4 * (d * d + d)


def ffn_weight_count(d: int, hidden: int) -> int:
    """Weights+biases of the two feed-forward affines."""
    return (d * hidden + hidden) + (hidden * d + d)


def _layer_param_count(config: ModelConfig) -> int:
    d = config.d
    kind = config.variant.kind
    if kind in ATTENTION_KINDS:
        n = attention_weight_count(d) + ffn_weight_count(d, config.ffn_hidden)
        if kind == "NAP":
            n += 2 * config.M
        if config.variant.pre_residual_norm:
            n += 2 * d  # attention-path output norm
            if kind != "NON":
                n += 2 * d  # attention-path hidden norm
            n += 2 * config.ffn_hidden + 2 * d  # feed-forward hidden + output norms
        else:
            n += 4 * d  # the two post-residual norms
        return n
    # SUM / MAX: reduce-broadcast has no affine of its own
    return (ffn_weight_count(d, config.ffn_hidden)
            + 4 * d                       # the two reduce-broadcast-path norms
            + 2 * config.ffn_hidden + 2 * d)  # feed-forward hidden + output norms


def _head_param_count(config: ModelConfig) -> int:
    d = config.d
    if config.head == "per_token":
        return d + 1
    if config.head == "first_token":
        return d * config.N_max + config.N_max
    return d * config.S + config.S


def param_count(config: ModelConfig) -> int:
    """Exact number of trainable scalars for the config."""
    n = config.S * config.d
    if config.use_positional:
        n += config.N_max * config.d
    n += 2 * config.d  # embedding norm
    n += config.L * _layer_param_count(config)
    n += _head_param_count(config)
    return n


def build_model(config: ModelConfig, rng: np.random.Generator) -> Model:
    """Initialize all parameters: truncated-normal(std 0.02) weights and
    embedding tables, zero biases, unit norm gains, NAP scalars g=1, b=0.

    Parameters are drawn from `rng` in registration order, so equal seeds
    give bitwise-equal models.
    """
    d, dt = config.d, config.dtype
    params: dict[str, Tensor] = {}

    def weight(name, shape):
        params[name] = gc.truncated_normal_init(shape, 0.02, rng, dtype=dt)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape, dtype=dt))

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape, dtype=dt))

    weight("token_emb", (config.S, d))
    if config.use_positional:
        weight("pos_emb", (config.N_max, d))
    ones("emb_norm_gain", (d,))
    zeros("emb_norm_bias", (d,))

    kind = config.variant.kind
    pre = config.variant.pre_residual_norm
    for i in range(config.L):
        p = f"layer{i}."
        if kind in ATTENTION_KINDS:
            for proj in ("q", "k", "v"):
                weight(p + proj + "_w", (d, d))
                zeros(p + proj + "_b", (d,))
            if kind == "NAP":
                ones(p + "nap_g", (config.M,))
                zeros(p + "nap_b", (config.M,))
            weight(p + "mix_w", (d, d))
            zeros(p + "mix_b", (d,))
            if pre and kind != "NON":
                ones(p + "attn_norm_hidden_gain", (d,))
                zeros(p + "attn_norm_hidden_bias", (d,))
            if pre:
                ones(p + "attn_norm_out_gain", (d,))
                zeros(p + "attn_norm_out_bias", (d,))
        else:  # SUM / MAX
            ones(p + "attn_norm_hidden_gain", (d,))
            zeros(p + "attn_norm_hidden_bias", (d,))
            ones(p + "attn_norm_out_gain", (d,))
            zeros(p + "attn_norm_out_bias", (d,))
        weight(p + "ffn_w1", (d, config.ffn_hidden))
        zeros(p + "ffn_b1", (config.ffn_hidden,))
        if pre:
            ones(p + "ffn_norm_hidden_gain", (config.ffn_hidden,))
            zeros(p + "ffn_norm_hidden_bias", (config.ffn_hidden,))
        weight(p + "ffn_w2", (config.ffn_hidden, d))
        zeros(p + "ffn_b2", (d,))
        if pre:
            ones(p + "ffn_norm_out_gain", (d,))
            zeros(p + "ffn_norm_out_bias", (d,))
        else:
            ones(p + "norm1_gain", (d,))
            zeros(p + "norm1_bias", (d,))
            ones(p + "norm2_gain", (d,))
            zeros(p + "norm2_bias", (d,))

    if config.head == "per_token":
        weight("head_w", (d, 1))
        zeros("head_b", (1,))
    elif config.head == "first_token":
        weight("head_w", (d, config.N_max))
        zeros("head_b", (config.N_max,))
    else:
        weight("head_w", (d, config.S))
        zeros("head_b", (config.S,))

    model = Model(config, params)
    actual = sum(p.data.size for p in params.values())
    expected = param_count(config)
    if actual != expected:
        raise AssertionError(
            f"parameter registry ({actual}) disagrees with param_count ({expected})")
    return model


# ---------------------------------------------------------------------------
# forward pass


def attention_logits(q: Tensor, k: Tensor) -> Tensor:
    """Pairwise dot products scaled by sqrt of the head dimension.

    q, k of shape (..., N, d_h) -> logits (..., N, N)."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(
            f"attention_logits: head dims differ {q.shape} vs {k.shape}")
    return gc.scale(gc.matmul(q, gc.transpose_last2(k)), 1.0 / math.sqrt(q.shape[-1]))


def pool(variant: ArchVariant, logits: Tensor | None, values: Tensor,
         nap_g: Tensor | None = None, nap_b: Tensor | None = None,
         eps: float = EPS) -> Tensor:
    """Aggregate value vectors over the sequence axis (second to last).

    BERT/MTE weight by softmax(logits); NAP by the standardized logits with
    gain/bias; NON uses raw logits scaled by 1/sqrt(N) followed by GELU;
    SUM/MAX reduce the values and broadcast the result back to every
    position. `logits` must be None for SUM/MAX.
    """
    n = values.shape[-2]
    if n == 0:
        raise ValueError("pool: empty sequence")
    kind = variant.kind
    if kind in ("SUM", "MAX"):
        if logits is not None:
            raise ValueError(f"pool: {kind} takes no logits")
        red = gc.reduce_sum(values, -2) if kind == "SUM" else gc.reduce_max(values, -2)
        return gc.broadcast_over_axis(red, -2, n)
    if logits is None:
        raise ValueError(f"pool: {kind} requires logits")
    if kind in ("BERT", "MTE"):
        return gc.matmul(gc.softmax_lastdim(logits), values)
    if kind == "NAP":
        weights = gc.seq_normalize(logits, nap_g, nap_b, eps)
        return gc.matmul(weights, values)
    if kind == "NON":
        return gc.gelu(gc.scale(gc.matmul(logits, values), 1.0 / math.sqrt(n)))
    raise ConfigError(f"unknown architecture kind {kind!r}")


def _maybe_dropout(x, config, train_mode, rng):
    if train_mode and config.dropout > 0.0:
        if rng is None:
            raise ValueError("train-mode forward with dropout needs an rng")
        return gc.dropout(x, config.dropout, rng)
    return x


def transformer_block(model: Model, layer: int, x: Tensor,
                      train_mode: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """One encoder layer; wiring depends on the variant flags."""
    cfg = model.config
    var = cfg.variant
    kind = var.kind
    P = model.params
    p = f"layer{layer}."
    n = x.shape[-2]

    if kind in ATTENTION_KINDS:
        q = gc.split_heads(gc.affine(x, P[p + "q_w"], P[p + "q_b"]), cfg.M)
        k = gc.split_heads(gc.affine(x, P[p + "k_w"], P[p + "k_b"]), cfg.M)
        v = gc.split_heads(gc.affine(x, P[p + "v_w"], P[p + "v_b"]), cfg.M)
        logits = attention_logits(q, k)
        if kind == "NAP":
            gt = gc.reshape(P[p + "nap_g"], (1, cfg.M, 1, 1))
            bt = gc.reshape(P[p + "nap_b"], (1, cfg.M, 1, 1))
            pooled = pool(var, logits, v, gt, bt)
        else:
            pooled = pool(var, logits, v)
        merged = gc.merge_heads(pooled)
        if var.pre_residual_norm:
            h = merged
            if kind != "NON":
                h = gc.layer_norm(h, P[p + "attn_norm_hidden_gain"],
                                  P[p + "attn_norm_hidden_bias"], EPS)
                if var.extra_gelu:
                    h = gc.gelu(h)
            a = gc.affine(h, P[p + "mix_w"], P[p + "mix_b"])
            a = gc.layer_norm(a, P[p + "attn_norm_out_gain"],
                              P[p + "attn_norm_out_bias"], EPS)
        else:
            a = gc.affine(merged, P[p + "mix_w"], P[p + "mix_b"])
    else:  # SUM / MAX reduce-broadcast sub-module
        pooled = pool(var, None, x)
        h = gc.layer_norm(pooled, P[p + "attn_norm_hidden_gain"],
                          P[p + "attn_norm_hidden_bias"], EPS)
        h = gc.gelu(h)
        a = gc.layer_norm(h, P[p + "attn_norm_out_gain"],
                          P[p + "attn_norm_out_bias"], EPS)

    a = _maybe_dropout(a, cfg, train_mode, rng)
    if var.pre_residual_norm or kind in ("SUM", "MAX"):
        u = gc.add(x, a)
        z = gc.affine(u, P[p + "ffn_w1"], P[p + "ffn_b1"])
        z = gc.layer_norm(z, P[p + "ffn_norm_hidden_gain"],
                          P[p + "ffn_norm_hidden_bias"], EPS)
        z = gc.gelu(z)
        z = gc.affine(z, P[p + "ffn_w2"], P[p + "ffn_b2"])
        z = gc.layer_norm(z, P[p + "ffn_norm_out_gain"],
                          P[p + "ffn_norm_out_bias"], EPS)
        z = _maybe_dropout(z, cfg, train_mode, rng)
        return gc.add(u, z)

    u = gc.layer_norm(gc.add(x, a), P[p + "norm1_gain"], P[p + "norm1_bias"], EPS)
    z = gc.affine(gc.gelu(gc.affine(u, P[p + "ffn_w1"], P[p + "ffn_b1"])),
                  P[p + "ffn_w2"], P[p + "ffn_b2"])
    z = _maybe_dropout(z, cfg, train_mode, rng)
    return gc.layer_norm(gc.add(u, z), P[p + "norm2_gain"], P[p + "norm2_bias"], EPS)


def forward(model: Model, token_ids: np.ndarray, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Embed, run the encoder stack, and apply the task head.

    Returns 2-d logits: (batch, N) for the per-token and first-token heads
    (first-token logits are the first N of the N_max-wide head), or
    (batch, S) for the mode head.
    """
    cfg = model.config
    P = model.params
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ValueError(f"token_ids must be (batch, N), got {ids.shape}")
    batch, n = ids.shape
    if n > cfg.N_max:
        raise ValueError(f"sequence length {n} exceeds N_max {cfg.N_max}")
    if ids.size and ids.max() >= cfg.S:
        raise ValueError(f"token id {int(ids.max())} out of range [0, {cfg.S})")

    x = gc.embedding_lookup(P["token_emb"], ids)
    if cfg.use_positional:
        x = gc.add(x, gc.narrow(P["pos_emb"], 0, 0, n))
    x = gc.layer_norm(x, P["emb_norm_gain"], P["emb_norm_bias"], EPS)

    for i in range(cfg.L):
        x = transformer_block(model, i, x, train_mode, rng)

    if cfg.head == "per_token":
        return gc.reshape(gc.affine(x, P["head_w"], P["head_b"]), (batch, n))
    first = gc.index_axis(x, 1, 0)
    logits = gc.affine(first, P["head_w"], P["head_b"])
    if cfg.head == "first_token" and n < cfg.N_max:
        logits = gc.narrow(logits, 1, 0, n)
    return logits


# ---------------------------------------------------------------------------
# checkpoints: flat little-endian float64 binary + JSON sidecar


def save_checkpoint(model: Model, prefix: str):
    """Write `prefix.bin` (concatenated <f8 values) and `prefix.json`."""
    blocks = []
    offset = 0
    with open(prefix + ".bin", "wb") as f:
        for name, p in model.params.items():
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
            blocks.append({"name": name, "shape": list(p.shape), "offset": offset})
            offset += p.data.size
    with open(prefix + ".json", "w") as f:
        json.dump({"format": "poollab-checkpoint-v1", "total_values": offset,
                   "blocks": blocks}, f, indent=1)


def load_checkpoint(config: ModelConfig, prefix: str) -> Model:
    with open(prefix + ".json") as f:
        meta = json.load(f)
    raw = np.fromfile(prefix + ".bin", dtype="<f8")
    if raw.size != meta["total_values"]:
        raise ValueError(
            f"checkpoint payload has {raw.size} values, sidecar says {meta['total_values']}")
    params: dict[str, Tensor] = {}
    for blk in meta["blocks"]:
        size = int(np.prod(blk["shape"])) if blk["shape"] else 1
        chunk = raw[blk["offset"]: blk["offset"] + size]
        params[blk["name"]] = Tensor(chunk.reshape(blk["shape"]).astype(config.dtype))
    return Model(config, params)
