"""Dense tensors with tape-based reverse-mode differentiation and Adam.

Every differentiable operation executed while a :class:`Tape` is active (and
with at least one gradient-requiring input) appends a backward closure to that
tape.  :func:`backward` replays the tape in reverse.  Shapes are explicit: the
only broadcasting allowed is between a tensor and a scalar (shape ``()``).
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def default_dtype() -> type:
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype of newly created tensors (used by gradient checks)."""
    previous = default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)


class Tape:
    """Ordered record of operations; inputs of each entry precede it."""

    def __init__(self):
        self.ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self):
        return len(self.ops)

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self.ops.append((out, backward_fn))

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype).reshape(t.data.shape)
    else:
        t.grad += g


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; record ``backward_fn(out_grad)`` when gradients are needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    tape = active_tape()
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.record(out, backward_fn)
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar broadcasting exists, so a scalar input collects the full sum
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


# ---- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")

    def bw(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")

    def bw(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")

    def bw(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "div")
    out = a.data / b.data

    def bw(g):
        _accumulate(a, _reduce_to(g / b.data, a.shape))
        _accumulate(b, _reduce_to(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: _accumulate(a, -g))


def one_minus(a: Tensor) -> Tensor:
    """Elementwise ``1 - a``."""
    return _make(1 - a.data, (a,), lambda g: _accumulate(a, -g))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"minimum: incompatible shapes {a.shape} and {b.shape}")
    return _select(a, b, a.data < b.data)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"maximum: incompatible shapes {a.shape} and {b.shape}")
    return _select(a, b, a.data > b.data)


def _select(a: Tensor, b: Tensor, take_a: np.ndarray) -> Tensor:
    tie = a.data == b.data
    wa = np.where(tie, 0.5, take_a).astype(a.data.dtype)

    def bw(g):
        _accumulate(a, g * wa)
        _accumulate(b, g * (1 - wa))

    return _make(np.where(take_a, a.data, b.data), (a, b), bw)


# ---- nonlinearities ---------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: _accumulate(a, g * mask))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: _accumulate(a, g * out * (1 - out)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accumulate(a, g * out))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.size < 1:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {a.shape}")
    z = np.exp(a.data - a.data.max())
    out = z / z.sum()

    def bw(g):
        _accumulate(a, out * (g - np.dot(g, out)))

    return _make(out, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"log_softmax expects a vector, got shape {a.shape}")
    shifted = a.data - a.data.max()
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (a,), lambda g: _accumulate(a, g - p * g.sum()))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Softmax cross-entropy of one logit vector against a class index."""
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects a logit vector, got shape {logits.shape}")
    shifted = logits.data - logits.data.max()
    z = np.exp(shifted)
    total = z.sum()
    loss = np.log(total) - shifted[target]

    def bw(g):
        grad = z / total
        grad[target] -= 1
        _accumulate(logits, g * grad)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


# ---- reductions and structure ----------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.asarray(a.data.sum()), (a,), lambda g: _accumulate(a, np.full(a.shape, g, dtype=a.data.dtype)))


def max(a: Tensor) -> Tensor:  # noqa: A001
    """Largest entry; the gradient is shared equally among tied maxima."""
    m = a.data.max()
    mask = (a.data == m).astype(a.data.dtype)
    mask /= mask.sum()
    return _make(np.asarray(m), (a,), lambda g: _accumulate(a, g * mask))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: _accumulate(a, g.T))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Join vectors end to end."""
    sizes = [t.size for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, g[lo:hi].reshape(t.shape))

    return _make(np.concatenate([t.data.ravel() for t in tensors]), tensors, bw)


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows of a matrix; ``index`` may be any integer array."""
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, index, g)

    return _make(table.data[index], (table,), bw)


def matmul(a, b) -> Tensor:
    """Matrix product; 1-d operands act as row/column vectors (no batching)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                ga = np.outer(g, b.data) if a.data.ndim == 2 else g * b.data
            else:
                ga = g @ b.data.T
            _accumulate(a, ga)
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.outer(a.data, g) if b.data.ndim == 2 else g * a.data
            else:
                gb = a.data.T @ g if b.data.ndim == 2 else a.data.T @ g
            _accumulate(b, gb)

    return _make(out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for a vector ``x`` or a stack of row vectors."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, np.outer(g, x.data) if x.data.ndim == 1 else g.T @ x.data)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g if g.ndim == 1 else g.sum(axis=0))

    return _make(out, inputs, bw)


# ---- driving the tape -------------------------------------------------------

def backward(tape: Tape, loss: Tensor, scale: float = 1.0) -> None:
    """Accumulate ``scale * d(loss)/d(t)`` into every gradient-requiring leaf."""
    if loss.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.full(loss.shape, scale, dtype=loss.data.dtype)
    for out, fn in reversed(tape.ops):
        if out.grad is not None:
            fn(out.grad)
            out.grad = None
    tape.ops.clear()


# ---- initialisation and optimisation ---------------------------------------

def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int, name: str | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class Adam:
    """Adam with bias correction; gradients are cleared after every step."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {p.name or p.shape} has no gradient")
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
            p.grad.fill(0)

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr}
