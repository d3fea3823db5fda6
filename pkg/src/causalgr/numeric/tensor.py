"""Dense tensors with a thread-local reverse-mode tape.

Operations executed inside an active :class:`Tape` whose inputs require
gradients are appended to that tape in creation order.  Creation order is a
topological order of the computation graph, so :meth:`Tape.backward` just walks
the recorded nodes in reverse.

Outside a tape nothing is recorded, which is how inference and finite-difference
probes run.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from causalgr.errors import ContractError, DimensionError, NumericError, ParameterError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def finite_checks_enabled() -> bool:
    return getattr(_local, "check_finite", True)


@contextlib.contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    """Toggle the NaN/Inf assertion on every forward result (on by default)."""
    previous = finite_checks_enabled()
    _local.check_finite = enabled
    try:
        yield
    finally:
        _local.check_finite = previous


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str) and dtype in DTYPES:
        return DTYPES[dtype]
    dt = np.dtype(dtype)
    if dt not in _FLOAT_DTYPES:
        raise ParameterError(f"unsupported dtype {dt}; expected one of {sorted(DTYPES)}")
    return dt


class Tensor:
    """An n-dimensional float32/float64 array that can sit on the tape."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=None if dtype is None else resolve_dtype(dtype))
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- metadata ----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


class Tape:
    """Ordered record of differentiable operations for one thread.

    Use as a context manager; operations run inside the ``with`` block are
    recorded.  ``grads`` holds the leaf gradients of the last backward pass.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self._index: dict[int, int] = {}
        self.grads: dict[Tensor, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _record(self, node: Tensor) -> None:
        self._index[id(node)] = len(self.nodes)
        self.nodes.append(node)

    def __contains__(self, node: Tensor) -> bool:
        idx = self._index.get(id(node))
        return idx is not None and self.nodes[idx] is node

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Reverse-mode sweep from a scalar ``loss``; returns leaf gradients."""
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss not in self:
            if loss.is_leaf and loss.requires_grad:
                self.grads = {loss: np.ones_like(loss.data)}
                return self.grads
            raise ContractError("loss is not on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[Tensor, np.ndarray] = {}
        start = self._index[id(loss)]
        for node in reversed(self.nodes[: start + 1]):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    prev = leaves.get(parent)
                    leaves[parent] = pg.copy() if prev is None else prev + pg
                else:
                    key = id(parent)
                    prev = pending.get(key)
                    pending[key] = pg if prev is None else prev + pg
        self.grads = leaves
        return leaves


def backward(loss: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    tape = tape or current_tape()
    if tape is None:
        raise ContractError("backward() called with no active tape")
    return tape.backward(loss)


# ---------------------------------------------------------------------------
# op plumbing

def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if finite_checks_enabled() and data.size and not np.isfinite(data).all():
        raise NumericError("non-finite value produced by forward operation")
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        tape._record(out)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                            unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth everywhere, which keeps gradient checks clean."""
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d ** 3)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def pad_left(x: Tensor, n: int, axis: int) -> Tensor:
    """Prepend ``n`` zero slices along ``axis``."""
    axis = axis % x.ndim
    width = [(0, 0)] * x.ndim
    width[axis] = (n, 0)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(n, None)
    sl = tuple(sl)
    return _make(np.pad(x.data, width), (x,), lambda g: (g[sl],))


# ---------------------------------------------------------------------------
# linear algebra and fused kernels

def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul dtypes differ: {a.dtype} vs {b.dtype}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def masked_softmax(x: Tensor, allowed: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis restricted to ``allowed`` entries.

    Rows with no allowed entry come out as all zeros rather than NaN.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("softmax over an empty last dimension")
    d = x.data
    if allowed is None:
        e = np.exp(d - d.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
    else:
        allowed = np.broadcast_to(allowed, d.shape)
        with np.errstate(invalid="ignore"):
            m = np.where(allowed, d, -np.inf).max(axis=-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(allowed, np.exp(np.where(allowed, d, m) - m), 0.0)
        s = e.sum(axis=-1, keepdims=True)
        p = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0)
    p = p.astype(d.dtype, copy=False)

    def bw(g):
        return (p * (g - (p * g).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax (max-subtracted) over the last axis."""
    return masked_softmax(x, None)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ParameterError(f"layernorm eps must be positive, got {eps}")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(
            f"layernorm gain/bias {gain.shape}/{bias.shape} do not match last extent {x.shape[-1]}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gb = g.sum(axis=lead) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(out, (x, gain, bias), bw)


def zeros(shape, dtype="f64") -> Tensor:
    return Tensor(np.zeros(shape, dtype=resolve_dtype(dtype)))
