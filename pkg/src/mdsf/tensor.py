"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a :class:`Tensor` that has a differentiable ancestor
records a node holding its parents and a closure that pushes the output
gradient back to them. :meth:`Tensor.backward` orders those nodes
topologically (the tape) and visits each exactly once in reverse.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import ConfigError, DimensionError, UsageError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(data) -> np.ndarray:
    if isinstance(data, Tensor):
        return data.data
    return np.asarray(data, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # -- graph construction -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        needs = grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _op=op)
        if needs:
            out._parents = parents
            out._backward = backward
        return out

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not require grad")
        tape = self._tape()
        for node in tape:
            if node._parents:
                node.grad = np.zeros_like(node.data)
        grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape)
        if self._parents:
            self.grad += grad
        else:
            self._accum(grad)
        for node in reversed(tape):
            if node._backward is not None:
                node._backward(node.grad)
        for node in tape:
            if node._parents:
                node.grad = None

    def _tape(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other

        def backward(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accum(-g)

        return Tensor._make(-a.data, (a,), backward, "neg")

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other

        def backward(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(-g, b.shape))

        return Tensor._make(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other
        out = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * out / b.data, b.shape))

        return Tensor._make(out, (a, b), backward, "div")

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise UsageError("only constant exponents are supported")
        a = self
        p = float(p)

        def backward(g):
            a._accum(g * p * a.data ** (p - 1.0))

        return Tensor._make(a.data**p, (a,), backward, "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions and shape ----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def backward(g):
            a._accum(g.reshape(a.shape))

        return Tensor._make(a.data.reshape(shape), (a,), backward, "reshape")

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if sorted(axes) != list(range(self.ndim)):
            raise ConfigError(f"invalid permutation {axes} for rank {self.ndim}")
        a = self
        inv = np.argsort(axes)

        def backward(g):
            a._accum(g.transpose(inv))

        return Tensor._make(a.data.transpose(axes), (a,), backward, "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        if isinstance(idx, Tensor):
            raise UsageError("index with integers, slices or integer arrays")
        a = self

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(np.array(a.data[idx]), (a,), backward, "index")

    # -- unary elementwise ---------------------------------------------------------
    def _unary(self, value: np.ndarray, local_grad, op: str):
        a = self

        def backward(g):
            a._accum(g * local_grad())

        return Tensor._make(value, (a,), backward, op)

    def exp(self):
        out = np.exp(self.data)
        return self._unary(out, lambda: out, "exp")

    def log(self):
        x = self.data
        return self._unary(np.log(x), lambda: 1.0 / x, "log")

    def sqrt(self):
        out = np.sqrt(self.data)

        def local():
            # subgradient 0 at the origin keeps sqrt(|d|^2) finite at d = 0
            with np.errstate(divide="ignore"):
                return np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)

        return self._unary(out, local, "sqrt")

    def abs(self):
        x = self.data
        return self._unary(np.abs(x), lambda: np.sign(x), "abs")

    def sigmoid(self):
        out = _sigmoid(self.data)
        return self._unary(out, lambda: out * (1.0 - out), "sigmoid")

    def softplus(self):
        x = self.data
        out = np.logaddexp(0.0, x)
        return self._unary(out, lambda: _sigmoid(x), "softplus")

    def silu(self):
        x = self.data
        s = _sigmoid(x)
        return self._unary(x * s, lambda: s * (1.0 + x * (1.0 - s)), "silu")

    def tanh(self):
        out = np.tanh(self.data)
        return self._unary(out, lambda: 1.0 - out * out, "tanh")

    def arctan(self):
        x = self.data
        return self._unary(np.arctan(x), lambda: 1.0 / (1.0 + x * x), "arctan")

    def maximum(self, other):
        return maximum(self, other)

    def minimum(self, other):
        return minimum(self, other)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


def _select(a, b, take_a: np.ndarray, op: str) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accum(_unbroadcast(np.where(take_a, g, 0.0), a.shape))
        b._accum(_unbroadcast(np.where(take_a, 0.0, g), b.shape))

    return Tensor._make(np.where(take_a, a.data, b.data), (a, b), backward, op)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _select(a, b, a.data >= b.data, "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _select(a, b, a.data <= b.data, "minimum")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise ConfigError(f"concat axis {axis} out of range for rank {ndim}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t._accum(piece)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    return concat([as_tensor(t).reshape(_insert(t.shape, axis)) for t in tensors], axis=axis)


def _insert(shape, axis):
    shape = list(shape)
    shape.insert(axis if axis >= 0 else len(shape) + axis + 1, 1)
    return tuple(shape)


def split(x: Tensor, sizes, axis: int = 0) -> list:
    """Split along ``axis`` into pieces of the given sizes (or ``sizes`` equal parts)."""
    if not -x.ndim <= axis < x.ndim:
        raise ConfigError(f"split axis {axis} out of range for rank {x.ndim}")
    n = x.shape[axis]
    if isinstance(sizes, int):
        if n % sizes:
            raise ConfigError(f"cannot split length {n} into {sizes} equal parts")
        sizes = [n // sizes] * sizes
    if sum(sizes) != n:
        raise DimensionError(f"split sizes {sizes} do not sum to {n}")
    out, start = [], 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + s)
        out.append(x[tuple(idx)])
        start += s
    return out


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array."""
    indices = np.asarray(indices, dtype=np.intp)
    a = x

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        a._accum(full)

    return Tensor._make(np.take(a.data, indices, axis=axis), (a,), backward, "take")


def where(cond, a, b) -> Tensor:
    return _select(a, b, np.asarray(cond, dtype=bool), "where")
