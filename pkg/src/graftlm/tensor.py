"""Dense float64 tensors with reverse-mode automatic differentiation.

Forward values are plain numpy arrays. An operation whose inputs carry
gradients records a closure that routes the output gradient back to its
parents; `backward` walks the graph once in reverse topological order and
then frees it. Gradients are *not* cleared by `backward`: a later
forward/backward pass adds into the same `.grad` buffers, which is exactly
what gradient accumulation in the trainer relies on. Use `zero_grads` to
reset.

Everything is float64. The graph is single-threaded per training step;
gradient-free tensors are immutable in practice and safe to share.
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, EmptyNeighborhoodError, ShapeError
from .rng import RngState

_FREED = "<freed>"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: tuple = ()
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self) -> str:
        tag = f", op={self._op!r}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return total(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires-grad ancestor of a scalar loss.

    The backward graph is freed afterwards; first-order only. Repeated
    forward/backward cycles accumulate into existing `.grad` buffers.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._op == _FREED:
        raise ContractError("backward graph already freed for this tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)

    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    # free the graph and intermediate grad buffers; leaves keep theirs
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._backward = None
            node._parents = ()
            node._op = _FREED


# ---------------------------------------------------------------------------
# primitive operations


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), back, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def back(g):
        _accumulate(a, g * c)

    return _from_op(data, (a,), back, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _from_op(data, (a, b), back, "matmul")


def transpose(a: Tensor) -> Tensor:
    data = a.data.T

    def back(g):
        _accumulate(a, g.T)

    return _from_op(data, (a,), back, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _from_op(data, (a,), back, "reshape")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _accumulate(a, full)

    return _from_op(data, (a,), back, "narrow")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def back(g):
        offset = 0
        for p, n in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accumulate(p, g[tuple(idx)])
            offset += n

    return _from_op(data, tuple(parts), back, "concat")


def rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a 2-d tensor (embedding lookup / row selection)."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accumulate(a, full)

    return _from_op(data, (a,), back, "rows")


def pick_per_row(a: Tensor, cols) -> Tensor:
    """out[i] = a[i, cols[i]] for a 2-d tensor."""
    cols = np.asarray(cols, dtype=np.intp)
    r = np.arange(a.data.shape[0])
    data = a.data[r, cols]

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (r, cols), g)
            _accumulate(a, full)

    return _from_op(data, (a,), back, "pick_per_row")


def total(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def back(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _from_op(data, (a,), back, "sum")


def relu(a: Tensor) -> Tensor:
    gate = a.data > 0
    data = np.where(gate, a.data, 0.0)

    def back(g):
        _accumulate(a, g * gate)

    return _from_op(data, (a,), back, "relu")


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    """x for x >= 0, slope*x otherwise; backward gates the same way."""
    if not (0.0 < slope < 1.0):
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    gate = np.where(a.data >= 0, 1.0, slope)
    data = a.data * gate

    def back(g):
        _accumulate(a, g * gate)

    return _from_op(data, (a,), back, "leaky_relu")


def elu(a: Tensor) -> Tensor:
    neg = a.data < 0
    data = np.where(neg, np.expm1(a.data), a.data)

    def back(g):
        _accumulate(a, g * np.where(neg, data + 1.0, 1.0))

    return _from_op(data, (a,), back, "elu")


def softmax_masked(a: Tensor, mask: Optional[np.ndarray] = None, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax with hard masking.

    Masked entries are exactly 0 in the output and receive zero gradient;
    unmasked entries are positive and sum to 1 along `axis`. A group with
    no unmasked entry is a structural error.
    """
    if mask is None:
        m = np.ones(a.data.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    counts = m.sum(axis=axis)
    if not counts.all():
        raise EmptyNeighborhoodError(
            f"softmax group along axis {axis} has no unmasked entry "
            f"({int((counts == 0).sum())} empty group(s))"
        )
    shifted = np.where(m, a.data, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    ex = np.where(m, np.exp(shifted), 0.0)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _from_op(data, (a,), back, "softmax_masked")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """log(softmax(a)) via log-sum-exp; never evaluates log(0)."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def back(g):
        soft = np.exp(data)
        _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _from_op(data, (a,), back, "log_softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then scale and shift."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def back(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(a, dx)
        lead = tuple(range(a.data.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))

    return _from_op(data, (a, gain, bias), back, "layer_norm")


def dropout(a: Tensor, rate: float, rng: RngState, training: bool) -> Tensor:
    """Zero each element with probability `rate`, scaling survivors by
    1/(1-rate); identity at inference or at rate 0."""
    if not (0.0 <= rate < 1.0):
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = rng.uniform(a.data.shape) >= rate
    factor = keep / (1.0 - rate)
    data = a.data * factor

    def back(g):
        _accumulate(a, g * factor)

    return _from_op(data, (a,), back, "dropout")


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular attention mask: position j may see positions <= j."""
    return np.tril(np.ones((n, n), dtype=bool))
