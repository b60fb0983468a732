"""Next-token pretraining of the toy foundation model.

Stands in for the pretrained checkpoints the adapter would normally sit
on. Windows of the tokenized corpus are packed into one sequence per step
with a block-diagonal causal mask and per-window positions, so a step is a
handful of medium matmuls instead of many tiny ones.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .model import FoundationConfig, forward_stream, init_foundation
from .rng import RngState
from .tensor import Tensor, backward, zero_grads
from .training import AdamWState, TrainConfig, adamw_step


@dataclass
class PretrainConfig:
    steps: int = 400
    batch_windows: int = 8
    block_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    holdout_fraction: float = 0.1


@dataclass
class PretrainReport:
    initial_holdout_loss: float
    final_holdout_loss: float
    steps: int
    wall_time: float
    losses: list[float] = field(default_factory=list)


def _windows(token_stream: np.ndarray, block: int) -> list[np.ndarray]:
    usable = (len(token_stream) - 1) // block
    return [token_stream[i * block : i * block + block + 1] for i in range(usable)]


def _packed_batch(windows: list[np.ndarray]):
    """Inputs, targets, block-diagonal causal mask and restarting positions."""
    inputs = np.concatenate([w[:-1] for w in windows])
    targets = np.concatenate([w[1:] for w in windows])
    positions = np.concatenate([np.arange(len(w) - 1) for w in windows])
    n = len(inputs)
    mask = np.zeros((n, n), dtype=bool)
    offset = 0
    for w in windows:
        k = len(w) - 1
        mask[offset : offset + k, offset : offset + k] = np.tril(np.ones((k, k), dtype=bool))
        offset += k
    return inputs, targets, mask, positions


def _mean_ce(params, config, windows) -> float:
    total_logprob = 0.0
    total_tokens = 0
    for w in windows:
        inputs, targets = w[:-1], w[1:]
        _, logits = forward_stream(inputs, params, config)
        lp = T.log_softmax(logits, axis=-1)
        total_logprob += float(T.pick_per_row(lp, targets).data.sum())
        total_tokens += len(targets)
    return -total_logprob / max(total_tokens, 1)


def pretrain_foundation(
    token_stream,
    config: FoundationConfig,
    settings: PretrainConfig | None = None,
) -> tuple[dict[str, Tensor], PretrainReport]:
    """Train fresh foundation weights; returns frozen params and a report.

    The held-out slice is the tail fraction of windows, untouched by
    training. A uniform-output model scores ln|V| per token, which is
    roughly where a fresh init lands.
    """
    settings = settings or PretrainConfig()
    stream = np.asarray(token_stream, dtype=np.intp)
    if len(stream) < settings.block_size + 1:
        raise ContractError(
            f"corpus of {len(stream)} tokens is shorter than one block of {settings.block_size}"
        )
    windows = _windows(stream, settings.block_size)
    # shuffle before the split so the held-out slice matches the training
    # distribution even when the corpus is ordered by section
    split_rng = RngState(settings.seed).derive(2)
    windows = [windows[int(i)] for i in split_rng.permutation(len(windows))]
    n_hold = max(1, int(len(windows) * settings.holdout_fraction)) if len(windows) > 1 else 0
    train_windows = windows[: len(windows) - n_hold] if n_hold else windows
    hold_windows = windows[len(windows) - n_hold :] if n_hold else windows

    rng = RngState(settings.seed)
    params = init_foundation(config, rng.derive(0))
    for p in params.values():
        p.requires_grad = True

    opt_cfg = TrainConfig(
        learning_rate=settings.learning_rate,
        weight_decay=settings.weight_decay,
        seed=settings.seed,
        train_groups="adapter+lora",  # only the Adam hyperparameters are used here
    )
    opt = AdamWState()
    batch_rng = rng.derive(1)
    started = time.monotonic()
    initial = _mean_ce(params, config, hold_windows)

    losses: list[float] = []
    for _ in range(settings.steps):
        pick = batch_rng.integers(0, len(train_windows), size=settings.batch_windows)
        batch = [train_windows[int(i)] for i in pick]
        inputs, targets, mask, positions = _packed_batch(batch)
        _, logits = forward_stream(inputs, params, config, attn_mask=mask, positions=positions)
        lp = T.log_softmax(logits, axis=-1)
        loss = T.scale(T.total(T.pick_per_row(lp, targets)), -1.0 / len(targets))
        if not np.isfinite(loss.data):
            raise NumericError(f"pretraining diverged (loss {float(loss.data)}) at step {opt.step}")
        zero_grads(params.values())
        backward(loss)
        adamw_step(params, opt, opt_cfg)
        losses.append(float(loss.data))

    final = _mean_ce(params, config, hold_windows)
    for p in params.values():
        p.requires_grad = False
        p.grad = None
    report = PretrainReport(
        initial_holdout_loss=initial,
        final_holdout_loss=final,
        steps=settings.steps,
        wall_time=time.monotonic() - started,
        losses=losses,
    )
    return params, report
