"""Dense float64 tensors with reverse-mode automatic differentiation.

The design is a classic gradient tape: ops execute eagerly on numpy
arrays and, when a tape is active and some input requires gradients,
append a node holding the backward closure.  backward() walks the node
list once in reverse, accumulating gradients additively so a tensor used
in several places receives the sum of its partials.

All data is float64 and C-contiguous.  There is no implicit broadcasting;
the only shape-mixing op is add() with a trailing-dimension bias, which
keeps every backward rule an exact mirror of its forward.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """An op was given tensors whose shapes it does not accept."""


class TapeError(RuntimeError):
    """backward() was asked to do something the tape cannot support."""


class DegenerateBatchError(ValueError):
    """A loss was requested over a batch with nothing to average."""


_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A numpy array plus the bookkeeping the tape needs.

    grad is None until backward() deposits something; it accumulates
    across backward calls until zeroed.  node_id identifies the tensor on
    the tape it was last recorded on and is None for tensors no tape has
    seen.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_tape_token")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = None
        self._tape_token: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: backward rules may hand the same array to several parents
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; every dunder routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)


class TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple, output: Tensor, backward_fn: Callable):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops; a context manager that activates recording."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE_TAPES.pop()
        if popped is not self:
            raise TapeError("tape exit order violated")

    def _claim(self, t: Tensor) -> None:
        # (re)assign the tensor an id under this tape; ids are unique per tape
        if t._tape_token != id(self):
            t.node_id = self._next_id
            t._tape_token = id(self)
            self._next_id += 1

    def record(self, inputs: tuple, output: Tensor, backward_fn: Callable) -> None:
        for t in inputs:
            self._claim(t)
        self._claim(output)
        self.nodes.append(TapeNode(inputs, output, backward_fn))


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(i.requires_grad for i in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(tensor) into .grad for every tensor on the tape.

    loss must be a scalar produced on this tape.  Each node is visited
    exactly once, in reverse recording order; inputs that do not require
    gradients are skipped.
    """
    if loss.data.shape != ():
        raise TapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._tape_token != id(tape) or loss.node_id is None:
        raise TapeError("loss was not produced on this tape")
    loss.accumulate_grad(np.ones((), dtype=np.float64))
    for node in reversed(tape.nodes):
        g_out = node.output.grad
        if g_out is None:
            continue
        grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            inp.accumulate_grad(g)


# ---------------------------------------------------------------------------
# ops


def add(a, b) -> Tensor:
    """Elementwise add; also accepts a trailing-dimension bias vector for b."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def backward_fn(g):
            return g, g
        return _record(a.data + b.data, (a, b), backward_fn)
    if b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]

        def backward_fn(g):
            return g, g.reshape(-1, n).sum(axis=0)
        return _record(a.data + b.data, (a, b), backward_fn)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        return g, -g
    return _record(a.data - b.data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (-g,)
    return _record(-a.data, (a,), backward_fn)


def mul(a, b) -> Tensor:
    """Elementwise product of same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return g * b_data, g * a_data
    return _record(a_data * b_data, (a, b), backward_fn)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def backward_fn(g):
        return (g * c,)
    return _record(a.data * c, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix product; 2D, or batched with identical leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return g @ b_data.swapaxes(-1, -2), a_data.swapaxes(-1, -2) @ g
    return _record(a_data @ b_data, (a, b), backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward_fn(g):
        return (g.reshape(old),)
    return _record(a.data.reshape(shape), (a,), backward_fn)


def swap_axes(a, i: int, j: int) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (np.ascontiguousarray(g.swapaxes(i, j)),)
    return _record(np.ascontiguousarray(a.data.swapaxes(i, j)), (a,), backward_fn)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along one axis."""
    a = _as_tensor(a)
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: slice [{start}:{start + length}] outside axis {axis} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    full_shape = a.shape

    def backward_fn(g):
        out = np.zeros(full_shape, dtype=np.float64)
        out[index] = g
        return (out,)
    return _record(np.ascontiguousarray(a.data[index]), (a,), backward_fn)


def embedding(table, ids) -> Tensor:
    """Gather rows of a (V, d) table; ids is an integer ndarray of any shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2D, got {table.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range for table with {table.shape[0]} rows")
    v = table.shape[0]

    def backward_fn(g):
        dt = np.zeros((v, table.shape[1]), dtype=np.float64)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (dt,)
    return _record(table.data[ids], (table,), backward_fn)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)
    return _record(y, (a,), backward_fn)


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer targets under 2D logits.

    mask, when given, is a boolean vector selecting which rows count; the
    mean runs over selected rows only.  A batch with nothing selected has
    no defined loss and raises.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2D, got {logits.shape}")
    b, n = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (b,):
        raise ShapeError(
            f"cross_entropy: targets shape {targets.shape} does not match batch {b}")
    if not np.issubdtype(targets.dtype, np.integer):
        raise ShapeError("cross_entropy: targets must be integers")
    if targets.size and (targets.min() < 0 or targets.max() >= n):
        raise ShapeError(f"cross_entropy: target index outside [0, {n})")
    if mask is None:
        active = np.ones(b, dtype=bool)
    else:
        active = np.asarray(mask, dtype=bool)
        if active.shape != (b,):
            raise ShapeError(
                f"cross_entropy: mask shape {active.shape} does not match batch {b}")
    n_active = int(active.sum())
    if n_active == 0:
        raise DegenerateBatchError("cross_entropy: every row is masked out")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    picked = logp[np.arange(b), targets]
    loss = -picked[active].sum() / n_active

    # backward only flows to logits; targets and mask are plain arrays
    def backward_fn(g):
        p = np.exp(logp)
        p[np.arange(b), targets] -= 1.0
        p[~active] = 0.0
        return (p * (float(g) / n_active),)
    return _record(np.float64(loss), (logits,), backward_fn)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    c = np.sqrt(2.0 / np.pi)
    x2 = x * x  # kept for backward; x*x*x beats np.power by a wide margin
    t = np.tanh(c * (x + 0.044715 * (x2 * x)))
    y = 0.5 * x * (1.0 + t)

    def backward_fn(g):
        dinner = c * (1.0 + 3 * 0.044715 * x2)
        dy = 0.5 * (1.0 + t) + (0.5 * x) * ((1.0 - t * t) * dinner)
        return (g * dy,)
    return _record(y, (a,), backward_fn)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - y ** 2),)
    return _record(y, (a,), backward_fn)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta must be ({d},), got {gamma.shape} and {beta.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = gamma.data * xhat + beta.data

    def backward_fn(g):
        dxhat = g * gamma.data
        # standard layer-norm backward over the last axis
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        return dx, dgamma, dbeta
    return _record(y, (a, gamma, beta), backward_fn)


def dropout(a, rate: float, stream) -> Tensor:
    """Inverted dropout driven by an explicit RngStream."""
    a = _as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (stream.uniform(a.shape) >= rate).astype(np.float64) / (1.0 - rate)

    def backward_fn(g):
        return (g * keep,)
    return _record(a.data * keep, (a,), backward_fn)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def backward_fn(g):
        return (np.full(shape, float(g), dtype=np.float64),)
    return _record(np.float64(a.data.sum()), (a,), backward_fn)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    n = a.data.size

    def backward_fn(g):
        return (np.full(shape, float(g) / n, dtype=np.float64),)
    return _record(np.float64(a.data.mean()), (a,), backward_fn)
