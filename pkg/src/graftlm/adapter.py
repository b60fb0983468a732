"""Multi-layer multi-head graph attention adapter over the three subgraphs.

Node features start as the foundation model's last-block hidden states,
stacked in layout order [input | partial output | knowledge]. Each layer
updates every node from its adjacency neighborhood with per-head attention

    F(p, q) = LeakyReLU(a . [W p || W q])        (source first)
    alpha_pq = softmax over the neighborhood of q of F(., q)

aggregates alpha-weighted projected neighbor features, applies the per-head
nonlinearity, concatenates heads and maps back to width d with the outer
projection. The adapter's final feature of the last partial-output node is
blended with the foundation's own feature through the shared output head:

    y_hat = softmax(lambda * W x_adapter + (1 - lambda) * W x_foundation)

With zero layers or lambda = 0 the prediction is the foundation's own,
bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import (
    ConfigError,
    ContractError,
    EmptyNeighborhoodError,
    NumericError,
)
from .graph import AblationSwitches, GraphLayout, build_adjacency
from .model import FoundationConfig, LoraDeltas, encode_knowledge, forward_stream, output_head
from .rng import RngState
from .tensor import Tensor
from .text import BOS_ID, EOS_ID

_NONLINEARITIES = ("elu", "relu", "leaky_relu", "identity")


@dataclass
class AdapterConfig:
    layers: int = 2
    heads: int = 8
    residual_weight: float = 0.2
    dropout: float = 0.1
    leaky_slope: float = 0.2
    nonlinearity: str = "elu"
    no_input_edges: bool = False
    full_context_edges: bool = False
    no_context_edges: bool = False
    no_knowledge_edges: bool = False

    def __post_init__(self):
        if not 0.0 <= self.residual_weight <= 1.0:
            raise ConfigError(f"residual weight must lie in [0, 1], got {self.residual_weight}")
        if self.layers < 0:
            raise ConfigError(f"layer count must be >= 0, got {self.layers}")
        if self.nonlinearity not in _NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")

    def switches(self) -> AblationSwitches:
        return AblationSwitches(
            no_input_edges=self.no_input_edges,
            full_context_edges=self.full_context_edges,
            no_context_edges=self.no_context_edges,
            no_knowledge_edges=self.no_knowledge_edges,
        )


def expected_adapter_shapes(config: AdapterConfig, dim: int) -> dict[str, tuple]:
    if config.layers > 0 and dim % config.heads != 0:
        raise ConfigError(f"feature width {dim} not divisible by head count {config.heads}")
    dh = dim // config.heads if config.layers > 0 else 0
    shapes: dict[str, tuple] = {}
    for l in range(config.layers):
        for h in range(config.heads):
            shapes[f"l{l}.h{h}.w"] = (dh, dim)
            shapes[f"l{l}.h{h}.a"] = (2 * dh,)
        shapes[f"l{l}.w_out"] = (dim, config.heads * dh)
    return shapes


def init_adapter(config: AdapterConfig, dim: int, rng: RngState) -> dict[str, Tensor]:
    """Glorot-style init, every array trainable."""
    params: dict[str, Tensor] = {}
    for name, shape in expected_adapter_shapes(config, dim).items():
        fan = sum(shape) if len(shape) > 1 else shape[0]
        params[name] = Tensor(rng.normal(shape, scale=np.sqrt(2.0 / fan)), requires_grad=True)
    return params


def _nonlinearity(x: Tensor, kind: str) -> Tensor:
    if kind == "elu":
        return T.elu(x)
    if kind == "relu":
        return T.relu(x)
    if kind == "leaky_relu":
        return T.leaky_relu(x, 0.2)
    return x


def attention_scores(
    q_index: int,
    neighbor_indices,
    features: np.ndarray,
    w: np.ndarray,
    a: np.ndarray,
    slope: float = 0.2,
) -> np.ndarray:
    """Reference single-node attention weights for one head.

    Returns the weight of each neighbor p of q, normalized over the
    neighborhood. Kept deliberately plain (loop plus stable softmax); the
    vectorized layer below must agree with it.
    """
    neighbors = list(neighbor_indices)
    if not neighbors:
        raise EmptyNeighborhoodError(f"node {q_index} has no neighbors")
    wq = w @ features[q_index]
    logits = np.empty(len(neighbors))
    for j, p in enumerate(neighbors):
        wp = w @ features[p]
        pre = a @ np.concatenate([wp, wq])
        logits[j] = pre if pre >= 0 else slope * pre
    logits -= logits.max()
    ex = np.exp(logits)
    return ex / ex.sum()


def gat_layer(
    features: Tensor,
    adjacency: np.ndarray,
    layer_params: dict[str, Tensor],
    config: AdapterConfig,
    layer_index: int,
    rng: Optional[RngState] = None,
    training: bool = False,
) -> Tensor:
    """One attention layer; every node is updated from its own neighborhood."""
    heads = []
    for h in range(config.heads):
        w = layer_params[f"l{layer_index}.h{h}.w"]
        a = layer_params[f"l{layer_index}.h{h}.a"]
        dh = w.data.shape[0]
        proj = T.matmul(features, T.transpose(w))  # N x d'
        src = T.matmul(proj, T.reshape(T.narrow(a, 0, 0, dh), (dh, 1)))  # N x 1
        dst = T.matmul(proj, T.reshape(T.narrow(a, 0, dh, dh), (dh, 1)))  # N x 1
        # logits[p, q] = F(p, q) with the source term down the rows
        logits = T.leaky_relu(T.add(src, T.transpose(dst)), config.leaky_slope)
        alpha = T.softmax_masked(logits, adjacency, axis=0)
        if training and rng is not None:
            alpha = T.dropout(alpha, config.dropout, rng, training)
        agg = T.matmul(T.transpose(alpha), proj)  # row q = sum_p alpha_pq W p
        heads.append(_nonlinearity(agg, config.nonlinearity))
    out = T.matmul(T.concat(heads, axis=1), T.transpose(layer_params[f"l{layer_index}.w_out"]))
    if training and rng is not None:
        out = T.dropout(out, config.dropout, rng, training)
    if not np.isfinite(out.data).all():
        raise NumericError(f"non-finite feature out of graph attention layer {layer_index}")
    return out


def adapter_features(
    features: Tensor,
    layout: GraphLayout,
    params: dict[str, Tensor],
    config: AdapterConfig,
    rng: Optional[RngState] = None,
    training: bool = False,
) -> Tensor:
    """Run all layers over the stacked node features; returns N x d."""
    adjacency = build_adjacency(layout, config.switches())
    x = features
    for l in range(config.layers):
        x = gat_layer(x, adjacency, params, config, l, rng, training)
    return x


def adapter_forward(
    input_states: Tensor,
    output_states: Tensor,
    knowledge_states: Tensor,
    params: dict[str, Tensor],
    config: AdapterConfig,
    rng: Optional[RngState] = None,
    training: bool = False,
) -> Tensor:
    """Final-layer feature of the last partial-output node (a d-vector)."""
    if config.layers < 1:
        raise ContractError("adapter_forward needs at least one layer; layers=0 bypasses the adapter")
    layout = GraphLayout(
        input_count=input_states.data.shape[0],
        output_count=output_states.data.shape[0],
        knowledge_count=knowledge_states.data.shape[0],
    )
    parts = [input_states, output_states]
    if layout.knowledge_count:
        parts.append(knowledge_states)
    stacked = T.concat(parts, axis=0)
    updated = adapter_features(stacked, layout, params, config, rng, training)
    last = layout.input_count + layout.output_count - 1
    return T.reshape(T.rows(updated, [last]), (updated.data.shape[1],))


def blend_logits(adapter_state: Tensor, foundation_state: Tensor, head: Tensor, residual_weight: float) -> Tensor:
    """Probability vector softmax(lam*W*x_adapter + (1-lam)*W*x_foundation)."""
    lam = float(residual_weight)
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"residual weight must lie in [0, 1], got {lam}")
    d = adapter_state.data.shape[0]
    graph_logits = T.matmul(T.reshape(adapter_state, (1, d)), T.transpose(head))
    orig_logits = T.matmul(T.reshape(foundation_state, (1, d)), T.transpose(head))
    blended = T.add(T.scale(graph_logits, lam), T.scale(orig_logits, 1.0 - lam))
    probs = T.softmax_masked(blended, axis=-1)
    return T.reshape(probs, (head.data.shape[0],))


def blended_position_logits(
    adapter_rows: Tensor,
    foundation_rows: Tensor,
    head: Tensor,
    residual_weight: float,
) -> Tensor:
    """Blended (pre-softmax) logits for a whole block of output positions."""
    lam = float(residual_weight)
    graph_logits = T.matmul(adapter_rows, T.transpose(head))
    orig_logits = T.matmul(foundation_rows, T.transpose(head))
    return T.add(T.scale(graph_logits, lam), T.scale(orig_logits, 1.0 - lam))


@dataclass
class GenerationResult:
    tokens: list[int]
    truncated: bool
    steps: int


@dataclass
class DecodeSettings:
    method: str = "greedy"  # "greedy" | "topk"
    top_k: int = 10
    max_len: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("greedy", "topk"):
            raise ConfigError(f"unknown decoding method {self.method!r}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")


def generate(
    question_tokens,
    knowledge_tokens,
    foundation_params,
    foundation_config: FoundationConfig,
    adapter_params: Optional[dict[str, Tensor]],
    adapter_config: AdapterConfig,
    deltas: Optional[LoraDeltas] = None,
    knowledge_deltas: Optional[LoraDeltas] = None,
    decode: Optional[DecodeSettings] = None,
    max_knowledge_tokens: int = 128,
) -> GenerationResult:
    """Autoregressive decoding through the blended prediction.

    Per step: encode [question, BOS, emitted so far] in the main stream,
    the (truncated) knowledge in the parallel stream, run the adapter over
    the stacked hidden states and blend with the foundation's prediction
    at the last output node. Stops at EOS or max_len. The graph is rebuilt
    from scratch every step; no state is cached across steps.
    """
    decode = decode or DecodeSettings()
    question = list(question_tokens)
    knowledge = list(knowledge_tokens)[:max_knowledge_tokens]
    use_adapter = adapter_config.layers > 0
    if use_adapter and adapter_params is None:
        raise ContractError("adapter parameters required when layer count > 0")

    k_states = encode_knowledge(knowledge, foundation_params, foundation_config, knowledge_deltas)
    head = output_head(foundation_params, deltas)
    sampler = RngState(decode.seed) if decode.method == "topk" else None

    emitted: list[int] = []
    truncated = False
    steps = 0
    while True:
        steps += 1
        stream = question + [BOS_ID] + emitted
        hidden, _ = forward_stream(stream, foundation_params, foundation_config, deltas)
        m = len(question)
        c = 1 + len(emitted)
        t_states = T.rows(hidden, np.arange(0, m))
        x_states = T.rows(hidden, np.arange(m, m + c))
        x_last = T.reshape(T.rows(hidden, [m + c - 1]), (foundation_config.dim,))
        if use_adapter:
            x_adapter = adapter_forward(
                t_states, x_states, k_states, adapter_params, adapter_config, training=False
            )
            probs = blend_logits(x_adapter, x_last, head, adapter_config.residual_weight)
        else:
            logits = T.matmul(T.reshape(x_last, (1, foundation_config.dim)), T.transpose(head))
            probs = T.reshape(T.softmax_masked(logits, axis=-1), (foundation_config.vocab_size,))

        if decode.method == "greedy":
            nxt = int(np.argmax(probs.data))
        else:
            p = probs.data
            top = np.argsort(-p, kind="stable")[: decode.top_k]
            renorm = p[top] / p[top].sum()
            nxt = int(top[sampler.choice(len(top), p=renorm)])

        if nxt == EOS_ID:
            break
        emitted.append(nxt)
        if len(emitted) >= decode.max_len:
            truncated = True
            break
    return GenerationResult(tokens=emitted, truncated=truncated, steps=steps)
