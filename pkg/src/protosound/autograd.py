"""Reverse-mode automatic differentiation over numpy arrays.

Every ``Variable`` created by an operation carries a monotonically increasing
``tape_id``.  Inputs always exist before the outputs built from them, so
sorting the reachable nodes by descending id gives a valid reverse
topological order; that sorted list is the computation record walked by
:meth:`Variable.backward`.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording of the computation graph inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Variable):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Variable:
    """A value in the computation graph plus its accumulated gradient."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.tape_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._grad: Optional[np.ndarray] = None

    # --- gradient bookkeeping -------------------------------------------------
    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=self.data.dtype)

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element Variable, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Variable":
        return Variable(self.data)

    def __repr__(self):
        return f"Variable(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def backward(self, grad=None):
        """Propagate ``grad`` (default: ones for a scalar) to every leaf.

        Leaf gradients accumulate across calls until :meth:`zero_grad`.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ValueError(f"gradient shape {grad.shape} != value shape {self.data.shape}")

        pending = {self.tape_id: grad}
        for node in _record(self):
            g = pending.pop(node.tape_id, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._grad = g.copy() if node._grad is None else node._grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.tape_id in pending:
                    pending[parent.tape_id] = pending[parent.tape_id] + pg
                else:
                    pending[parent.tape_id] = pg

    # --- operator sugar -------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _record(root: Variable) -> list:
    """Nodes reachable from ``root`` in reverse creation order, each once."""
    seen = {root.tape_id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.tape_id not in seen and p.requires_grad:
                seen[p.tape_id] = p
                stack.append(p)
    return [seen[k] for k in sorted(seen, reverse=True)]


def as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def make_node(data: np.ndarray, parents: Sequence[Variable], backward: Callable, op: str) -> Variable:
    """Wrap an op result; records the graph edge only when needed."""
    out = Variable(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a, b):
    a = a if isinstance(a, Variable) else Variable(np.asarray(a, dtype=b.dtype if isinstance(b, Variable) else None))
    b = b if isinstance(b, Variable) else Variable(np.asarray(b, dtype=a.dtype))
    return a, b


# --- elementwise --------------------------------------------------------------
def add(a, b) -> Variable:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Variable:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Variable:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Variable:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return make_node(out, (a, b), backward, "div")


def neg(a) -> Variable:
    a = as_variable(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Variable:
    a = as_variable(a)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_node(a.data ** exponent, (a,), backward, "pow")


def sqrt(a) -> Variable:
    a = as_variable(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a) -> Variable:
    a = as_variable(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Variable:
    a = as_variable(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Variable:
    a = as_variable(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# --- shape --------------------------------------------------------------------
def reshape(a, shape) -> Variable:
    a = as_variable(a)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Variable:
    a = as_variable(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


# --- reductions ---------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims=False) -> Variable:
    a = as_variable(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Variable:
    a = as_variable(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise ValueError("mean over a zero-length axis")
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), backward, "mean")


def max_(a, axis: int = -1, keepdims: bool = False) -> Variable:
    """Maximum along one axis; gradient goes to the first maximal entry."""
    a = as_variable(a)
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise ValueError("max over a zero-length axis")
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    return make_node(out if keepdims else np.squeeze(out, axis), (a,), backward, "max")


def argmax(a, axis: int = -1) -> np.ndarray:
    """First-index argmax; a plain array, not part of the graph."""
    return np.argmax(as_variable(a).data, axis=axis)


# --- contractions -------------------------------------------------------------
def einsum(subscripts: str, a, b) -> Variable:
    """Two-operand einsum without repeated or operand-private summed indices."""
    a, b = _pair(a, b)
    lhs, out_s = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index in operand {s!r}")
        private = set(s) - set(other) - set(out_s)
        if private:
            raise ValueError(f"index {sorted(private)} is summed inside one operand only")
    out = np.einsum(f"{sa},{sb}->{out_s}", a.data, b.data, optimize=True)

    def backward(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_s},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_node(np.asarray(out), (a, b), backward, "einsum")


def matmul(a, b) -> Variable:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


# --- normalised exponentials -------------------------------------------------
def softmax(a, axis: int = -1) -> Variable:
    a = as_variable(a)
    if a.shape[axis] == 0:
        raise ValueError("softmax over a zero-length axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Variable:
    a = as_variable(a)
    if a.shape[axis] == 0:
        raise ValueError("log_softmax over a zero-length axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), backward, "log_softmax")


def norm(a, axis: int = -1, keepdims: bool = False) -> Variable:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as 0."""
    a = as_variable(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * a.data / safe, 0.0).astype(a.dtype),)

    return make_node(out if keepdims else np.squeeze(out, axis), (a,), backward, "norm")
