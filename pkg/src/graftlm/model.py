"""Toy decoder-only transformer used as the foundation model.

Two parallel streams share one set of weights: the main stream encodes the
question followed by BOS and the partial output, the knowledge stream
encodes knowledge tokens on their own position axis (no BOS). Hidden
states are the post-final-layernorm vectors of the last block, and the
output head `head` maps them to logits; the residual blend in the graph
adapter reuses exactly this head so that bypassing the adapter reproduces
the foundation's own prediction bit for bit.

Base weights are always frozen; fine-tuning happens through low-rank
deltas (`apply_lora`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, LengthError
from .rng import RngState
from .tensor import Tensor


@dataclass
class FoundationConfig:
    vocab_size: int
    dim: int = 64
    blocks: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 512
    pos_kind: str = "learned"

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.pos_kind != "learned":
            raise ConfigError(f"unsupported positional encoding {self.pos_kind!r}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def expected_foundation_shapes(config: FoundationConfig) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {
        "tok_emb": (config.vocab_size, config.dim),
        "pos_emb": (config.max_len, config.dim),
    }
    d, f = config.dim, config.ffn_dim
    for i in range(config.blocks):
        shapes[f"b{i}.ln1.g"] = (d,)
        shapes[f"b{i}.ln1.b"] = (d,)
        shapes[f"b{i}.attn.wq"] = (d, d)
        shapes[f"b{i}.attn.wk"] = (d, d)
        shapes[f"b{i}.attn.wv"] = (d, d)
        shapes[f"b{i}.attn.wo"] = (d, d)
        shapes[f"b{i}.ln2.g"] = (d,)
        shapes[f"b{i}.ln2.b"] = (d,)
        shapes[f"b{i}.ffn.w1"] = (f, d)
        shapes[f"b{i}.ffn.w2"] = (d, f)
    shapes["lnf.g"] = (d,)
    shapes["lnf.b"] = (d,)
    shapes["head"] = (config.vocab_size, d)
    return shapes


def init_foundation(config: FoundationConfig, rng: RngState) -> dict[str, Tensor]:
    """Fresh parameters; layernorm gains 1, biases 0, weights N(0, 0.02)."""
    params: dict[str, Tensor] = {}
    for name, shape in expected_foundation_shapes(config).items():
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(shape, scale=0.02)
        params[name] = Tensor(arr)
    return params


@dataclass
class LowRankDelta:
    """Trainable pair (a: out x r, b: r x in); effective = base + scaling*a@b.

    `a` starts small-random and `b` zero, so a fresh delta is exactly null.
    """

    a: Tensor
    b: Tensor
    scaling: float


LoraDeltas = dict[str, LowRankDelta]


def apply_lora(
    params: dict[str, Tensor],
    targets: list[str],
    rank: int,
    scaling: float,
    rng: RngState,
) -> LoraDeltas:
    if rank < 1:
        raise ConfigError(f"lora rank must be >= 1, got {rank}")
    deltas: LoraDeltas = {}
    for name in targets:
        if name not in params:
            raise ConfigError(f"unknown lora target matrix {name!r}")
        base = params[name]
        if base.data.ndim != 2:
            raise ConfigError(f"lora target {name!r} is not a matrix")
        out_dim, in_dim = base.data.shape
        a = Tensor(rng.normal((out_dim, rank), scale=0.01), requires_grad=True)
        b = Tensor(np.zeros((rank, in_dim)), requires_grad=True)
        deltas[name] = LowRankDelta(a=a, b=b, scaling=float(scaling))
    return deltas


def lora_trainables(deltas: LoraDeltas) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for name, delta in deltas.items():
        out[f"lora.{name}.a"] = delta.a
        out[f"lora.{name}.b"] = delta.b
    return out


def _effective(params: dict[str, Tensor], deltas: Optional[LoraDeltas], name: str) -> Tensor:
    base = params[name]
    if deltas and name in deltas:
        d = deltas[name]
        return T.add(base, T.scale(T.matmul(d.a, d.b), d.scaling))
    return base


def forward_stream(
    tokens,
    params: dict[str, Tensor],
    config: FoundationConfig,
    deltas: Optional[LoraDeltas] = None,
    attn_mask: Optional[np.ndarray] = None,
    positions: Optional[np.ndarray] = None,
):
    """Run one stream; returns (hidden states n x d, logits n x |V|).

    Causal throughout: position j attends only to positions <= j, so
    hidden states of a prefix equal the corresponding rows of a longer
    run. `attn_mask` and `positions` exist for block-diagonal pretraining
    batches (several windows packed into one pass); the mask must never
    allow looking ahead.
    """
    ids = np.asarray(tokens, dtype=np.intp)
    n = ids.shape[0]
    if n == 0:
        return Tensor(np.zeros((0, config.dim))), Tensor(np.zeros((0, config.vocab_size)))
    if positions is None:
        positions = np.arange(n)
    if positions.max(initial=0) >= config.max_len:
        raise LengthError(f"sequence positions exceed max length {config.max_len}")

    x = T.add(T.rows(params["tok_emb"], ids), T.rows(params["pos_emb"], positions))
    mask = attn_mask if attn_mask is not None else T.causal_mask(n)
    dk = config.head_dim
    inv_sqrt_dk = 1.0 / math.sqrt(dk)

    for i in range(config.blocks):
        pre = T.layer_norm(x, params[f"b{i}.ln1.g"], params[f"b{i}.ln1.b"])
        q_all = T.matmul(pre, T.transpose(_effective(params, deltas, f"b{i}.attn.wq")))
        k_all = T.matmul(pre, T.transpose(_effective(params, deltas, f"b{i}.attn.wk")))
        v_all = T.matmul(pre, T.transpose(_effective(params, deltas, f"b{i}.attn.wv")))
        heads = []
        for h in range(config.heads):
            q = T.narrow(q_all, 1, h * dk, dk)
            k = T.narrow(k_all, 1, h * dk, dk)
            v = T.narrow(v_all, 1, h * dk, dk)
            scores = T.scale(T.matmul(q, T.transpose(k)), inv_sqrt_dk)
            probs = T.softmax_masked(scores, mask, axis=-1)
            heads.append(T.matmul(probs, v))
        attn_out = T.matmul(
            T.concat(heads, axis=1), T.transpose(_effective(params, deltas, f"b{i}.attn.wo"))
        )
        x = T.add(x, attn_out)
        pre2 = T.layer_norm(x, params[f"b{i}.ln2.g"], params[f"b{i}.ln2.b"])
        hidden_ffn = T.relu(T.matmul(pre2, T.transpose(_effective(params, deltas, f"b{i}.ffn.w1"))))
        x = T.add(x, T.matmul(hidden_ffn, T.transpose(_effective(params, deltas, f"b{i}.ffn.w2"))))

    hidden = T.layer_norm(x, params["lnf.g"], params["lnf.b"])
    logits = T.matmul(hidden, T.transpose(_effective(params, deltas, "head")))
    return hidden, logits


def encode_knowledge(
    tokens,
    params: dict[str, Tensor],
    config: FoundationConfig,
    deltas: Optional[LoraDeltas] = None,
) -> Tensor:
    """Knowledge stream: same weights, own position axis, no BOS."""
    hidden, _ = forward_stream(tokens, params, config, deltas)
    return hidden


def output_head(params: dict[str, Tensor], deltas: Optional[LoraDeltas] = None) -> Tensor:
    return _effective(params, deltas, "head")
