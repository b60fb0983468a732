"""Teacher-forced training of the adapter and/or low-rank deltas.

One sample = one graph (per-device batch size is fixed at 1); gradient
accumulation over `accumulation` samples supplies the effective batch.
The loss is the cross entropy summed over answer positions, where the
partial output fed to the graph at position i is the gold prefix Y_<i
prefixed by BOS. All answer positions are scored in a single graph pass:
the causal context block makes an output node's update independent of
later output nodes, so the full graph reproduces every prefix graph at
once.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .adapter import AdapterConfig, adapter_features, blended_position_logits
from .checkpoint import save_checkpoint
from .errors import ConfigError, ContractError, NumericError
from .graph import GraphLayout
from .model import (
    FoundationConfig,
    LoraDeltas,
    encode_knowledge,
    forward_stream,
    lora_trainables,
    output_head,
)
from .rng import RngState
from .tensor import Tensor, backward, zero_grads
from .text import BOS_ID, EOS_ID, Sample

TRAIN_GROUPS = ("adapter", "lora", "adapter+lora")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 2
    batch_size: int = 1
    accumulation: int = 64
    seed: int = 0
    train_groups: str = "adapter+lora"
    max_knowledge_tokens: int = 128
    append_eos: bool = True
    lora_on_knowledge_stream: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.accumulation < 1:
            raise ConfigError(f"accumulation steps must be >= 1, got {self.accumulation}")
        if self.batch_size != 1:
            raise ConfigError("per-device batch size is fixed at 1 (graphs are per-sample)")
        if self.train_groups not in TRAIN_GROUPS:
            raise ConfigError(f"train_groups must be one of {TRAIN_GROUPS}, got {self.train_groups!r}")


@dataclass
class TrainRecord:
    step: int
    loss: float
    wall_time: float
    norms: dict[str, float] = field(default_factory=dict)
    skipped: bool = False


@dataclass
class ModelState:
    """Everything needed to score or decode: weights plus both configs."""

    foundation_params: dict[str, Tensor]
    foundation_config: FoundationConfig
    adapter_config: AdapterConfig
    adapter_params: Optional[dict[str, Tensor]] = None
    deltas: Optional[LoraDeltas] = None
    lora_on_knowledge_stream: bool = True

    @property
    def knowledge_deltas(self) -> Optional[LoraDeltas]:
        return self.deltas if self.lora_on_knowledge_stream else None


def teacher_forced_loss(
    sample: Sample,
    state: ModelState,
    rng: Optional[RngState] = None,
    training: bool = False,
    max_knowledge_tokens: int = 128,
    append_eos: bool = True,
) -> Tensor:
    """Eq.-style summed cross entropy of the blended predictions over the
    gold answer (plus EOS when append_eos), teacher forced."""
    if not sample.answer:
        raise ContractError("teacher_forced_loss needs a nonempty answer")
    question = list(sample.question)
    knowledge = list(sample.knowledge)[:max_knowledge_tokens]
    if append_eos:
        output_tokens = [BOS_ID] + list(sample.answer)
        targets = list(sample.answer) + [EOS_ID]
    else:
        output_tokens = [BOS_ID] + list(sample.answer[:-1])
        targets = list(sample.answer)

    stream = question + output_tokens
    hidden, _ = forward_stream(stream, state.foundation_params, state.foundation_config, state.deltas)
    m, c = len(question), len(output_tokens)
    x0_rows = T.rows(hidden, np.arange(m, m + c))
    head = output_head(state.foundation_params, state.deltas)

    if state.adapter_config.layers > 0:
        k_states = encode_knowledge(
            knowledge, state.foundation_params, state.foundation_config, state.knowledge_deltas
        )
        s = k_states.data.shape[0]
        t_rows = T.rows(hidden, np.arange(0, m))
        parts = [t_rows, x0_rows] + ([k_states] if s else [])
        stacked = T.concat(parts, axis=0)
        layout = GraphLayout(input_count=m, output_count=c, knowledge_count=s)
        updated = adapter_features(
            stacked, layout, state.adapter_params, state.adapter_config, rng, training
        )
        xl_rows = T.rows(updated, np.arange(m, m + c))
        blended = blended_position_logits(
            xl_rows, x0_rows, head, state.adapter_config.residual_weight
        )
    else:
        blended = T.matmul(x0_rows, T.transpose(head))

    log_probs = T.log_softmax(blended, axis=-1)
    picked = T.pick_per_row(log_probs, targets)
    return T.scale(T.total(picked), -1.0)


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: AdamWState, config: TrainConfig) -> bool:
    """One decoupled-weight-decay Adam update; returns False (step skipped,
    no state mutated) if any gradient is non-finite."""
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            return False
        grads[name] = g
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data = p.data - config.learning_rate * config.weight_decay * p.data
        p.data = p.data - config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)
    return True


def trainable_parameters(state: ModelState, config: TrainConfig) -> dict[str, Tensor]:
    """Select parameter groups and set requires_grad flags accordingly.

    Foundation base weights are never trainable here; adapter-only runs
    leave them (and any deltas) bit-identical.
    """
    out: dict[str, Tensor] = {}
    want_adapter = "adapter" in config.train_groups
    want_lora = "lora" in config.train_groups
    if state.adapter_params is not None:
        for name, p in state.adapter_params.items():
            p.requires_grad = want_adapter
            if want_adapter:
                out[f"adapter.{name}"] = p
    if state.deltas is not None:
        for name, p in lora_trainables(state.deltas).items():
            p.requires_grad = want_lora
            if want_lora:
                out[name] = p
    if want_adapter and state.adapter_params is None and state.adapter_config.layers > 0:
        raise ConfigError("train_groups includes the adapter but no adapter parameters exist")
    return out


def group_norms(trainable: dict[str, Tensor]) -> dict[str, float]:
    sums: dict[str, float] = {}
    for name, p in trainable.items():
        group = name.split(".", 1)[0]
        sums[group] = sums.get(group, 0.0) + float((p.data ** 2).sum())
    return {g: float(np.sqrt(s)) for g, s in sums.items()}


def state_to_checkpoint(state: ModelState, path) -> None:
    sections: dict = {
        "foundation": (
            asdict(state.foundation_config),
            {k: v.data for k, v in state.foundation_params.items()},
        )
    }
    if state.adapter_params is not None:
        sections["adapter"] = (
            asdict(state.adapter_config),
            {k: v.data for k, v in state.adapter_params.items()},
        )
    if state.deltas is not None:
        arrays = {}
        meta = {"targets": sorted(state.deltas), "scaling": {}, "rank": {}}
        for name, delta in state.deltas.items():
            arrays[f"{name}.a"] = delta.a.data
            arrays[f"{name}.b"] = delta.b.data
            meta["scaling"][name] = delta.scaling
            meta["rank"][name] = int(delta.a.data.shape[1])
        sections["lora"] = (meta, arrays)
    save_checkpoint(path, sections)


def train_adapter(
    samples: list[Sample],
    state: ModelState,
    config: TrainConfig,
    log_path=None,
    checkpoint_dir=None,
) -> list[TrainRecord]:
    """Epoch loop with gradient accumulation; mutates the trainable
    parameters in `state` in place and returns the step records."""
    if not samples:
        raise ContractError("training needs a nonempty dataset")
    trainable = trainable_parameters(state, config)
    if not trainable:
        raise ConfigError(f"no trainable parameters for groups {config.train_groups!r}")
    zero_grads(trainable.values())

    order_rng = RngState(config.seed).derive(0)
    dropout_rng = RngState(config.seed).derive(1)
    opt = AdamWState()
    records: list[TrainRecord] = []
    started = time.monotonic()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def flush_window(window_losses: list[float]) -> None:
        applied = adamw_step(trainable, opt, config)
        rec = TrainRecord(
            step=len(records) + 1,
            loss=float(np.mean(window_losses)),
            wall_time=time.monotonic() - started,
            norms=group_norms(trainable),
            skipped=not applied,
        )
        records.append(rec)
        if log_fh:
            log_fh.write(json.dumps(asdict(rec)) + "\n")
        zero_grads(trainable.values())

    try:
        consecutive_bad = 0
        for epoch in range(config.epochs):
            pending = 0
            window_losses: list[float] = []
            for idx in order_rng.permutation(len(samples)):
                loss = teacher_forced_loss(
                    samples[int(idx)],
                    state,
                    rng=dropout_rng,
                    training=True,
                    max_knowledge_tokens=config.max_knowledge_tokens,
                    append_eos=config.append_eos,
                )
                if not np.isfinite(loss.data):
                    consecutive_bad += 1
                    if consecutive_bad >= 10:
                        raise NumericError(
                            f"loss non-finite for {consecutive_bad} consecutive samples at epoch {epoch}"
                        )
                    continue
                consecutive_bad = 0
                backward(loss)
                window_losses.append(float(loss.data))
                pending += 1
                if pending == config.accumulation:
                    flush_window(window_losses)
                    pending = 0
                    window_losses = []
            if pending:
                flush_window(window_losses)
            if checkpoint_dir is not None:
                state_to_checkpoint(state, Path(checkpoint_dir) / f"epoch{epoch + 1}.ckpt")
    finally:
        if log_fh:
            log_fh.close()
    return records
