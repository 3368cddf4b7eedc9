"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are dynamic: every op returns a new :class:`Tensor` that remembers its
inputs and a backward rule.  Creation order is recorded with a global counter,
so sorting a graph's nodes by creation id gives a topological order and fixes
the order in which gradient contributions are summed.

Broadcasting is limited to equal shapes and scalar-with-tensor.  The only
exception is :func:`linear`, which adds a bias row to every sample.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_next_id = itertools.count()


class Tensor:
    """A float64 array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "inputs", "_backward", "id")

    def __init__(self, data, requires_grad=False, *, op="leaf", inputs=(), backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.inputs = inputs
        self._backward = backward
        self.id = next(_next_id)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self.inputs

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op, inputs, backward):
    """Wrap an op output; the graph link is kept only when a gradient can flow."""
    if any(t.requires_grad for t in inputs):
        return Tensor(data, True, op=op, inputs=tuple(inputs), backward=backward)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# matrix ops


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, "matmul", (a, b), back)


def linear(x, w, b, activation=None):
    """Affine map ``x @ w + b`` with an optional fused ``relu`` or ``tanh``.

    ``x`` is [n, i], ``w`` is [i, o] and ``b`` is [o]; ``b`` is added to every
    row.  Fusing the activation saves one graph node per layer.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: cannot apply {w.shape} weights to {x.shape} input")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    out += b.data
    if activation == "relu":
        np.maximum(out, 0.0, out=out)
    elif activation == "tanh":
        np.tanh(out, out=out)
    elif activation is not None:
        raise ValueError(f"linear: unsupported fused activation {activation!r}")

    def back(g):
        if activation == "relu":
            g = np.where(out > 0.0, g, 0.0)  # relu'(0) = 0
        elif activation == "tanh":
            g = g * (1.0 - out * out)
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    op = "linear" if activation is None else f"linear_{activation}"
    return _result(out, op, (x, w, b), back)


# ---------------------------------------------------------------------------
# elementwise ops


def _binary_operands(a, b, name):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible")
    return a, b


def _unbroadcast(g, shape):
    # the scalar operand of a scalar-with-tensor op receives the summed gradient
    return g if g.shape == shape else np.asarray(g.sum())


def add(a, b):
    a, b = _binary_operands(a, b, "add")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, "add", (a, b), back)


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, "sub", (a, b), back)


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, "mul", (a, b), back)


def scale(a, c):
    """Multiply by a Python number (no gradient w.r.t. ``c``)."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, "scale", (a,), lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def abs(a):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    sign = np.sign(a.data)  # sign(0) == 0
    return _result(np.abs(a.data), "abs", (a,), lambda g: (g * sign,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: input has non-positive entries (clamp before calling)")
    ad = a.data
    return _result(np.log(ad), "log", (a,), lambda g: (g / ad,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _result(out, "relu", (a,), lambda g: (np.where(out > 0.0, g, 0.0),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def clamp_min(a, lo):
    """``max(a, lo)``; the gradient is passed only where ``a > lo``."""
    a = as_tensor(a)
    keep = a.data > lo
    return _result(np.where(keep, a.data, lo), "clamp_min", (a,), lambda g: (np.where(keep, g, 0.0),))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "abs": abs,
    "log": log,
    "exp": exp,
    "relu": relu,
    "tanh": tanh,
    "clamp_min": clamp_min,
}


def elementwise(kind, *args):
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# row softmax and reductions


def softmax(logits):
    """Row-wise softmax of a [batch, c] tensor (max-shifted for stability)."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2 or logits.shape[1] < 1:
        raise DimensionError(f"softmax: expected [batch, c] logits, got {logits.shape}")
    z = logits.data
    e = np.exp(z - z.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _result(out, "softmax", (logits,), back)


def _check_axis(t, axis, name):
    if axis is None:
        return
    if not isinstance(axis, (int, np.integer)) or not -t.data.ndim <= axis < t.data.ndim:
        raise DimensionError(f"{name}: axis {axis!r} invalid for shape {t.shape}")


def reduce_sum(t, axis=None):
    t = as_tensor(t)
    _check_axis(t, axis, "sum")
    shape = t.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(t.data.sum(axis=axis), "sum", (t,), back)


def reduce_mean(t, axis=None):
    t = as_tensor(t)
    _check_axis(t, axis, "mean")
    shape = t.shape
    n = t.data.size if axis is None else shape[axis]

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result(t.data.mean(axis=axis), "mean", (t,), back)


def reduce(kind, t, axis=None):
    if kind == "sum":
        return reduce_sum(t, axis)
    if kind == "mean":
        return reduce_mean(t, axis)
    raise ValueError(f"unknown reduction {kind!r}")


# ---------------------------------------------------------------------------
# graph traversal and backward


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple  # indices into Graph.nodes
    tensor: Tensor


@dataclass(frozen=True)
class Graph:
    """Topologically sorted view of the gradient-carrying part of a graph."""

    nodes: tuple

    @classmethod
    def trace(cls, root):
        seen = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if t.id in seen or not t.requires_grad:
                continue
            seen[t.id] = t
            stack.extend(t.inputs)
        ordered = sorted(seen.values(), key=lambda t: t.id)
        index = {t.id: i for i, t in enumerate(ordered)}
        nodes = tuple(
            Node(t.op, tuple(index[p.id] for p in t.inputs if p.requires_grad), t) for t in ordered
        )
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def _propagate(root):
    """Run the backward sweep; return the graph and {tensor id: gradient}."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    graph = Graph.trace(root)
    grads = {}
    if not graph.nodes:
        return graph, grads
    grads[root.id] = np.ones_like(root.data)
    for node in reversed(graph.nodes):
        t = node.tensor
        g = grads.get(t.id)
        if g is None or t._backward is None:
            continue
        for parent, pg in zip(t.inputs, t._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg
    return graph, grads


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    graph, grads = _propagate(root)
    for node in graph.nodes:
        t = node.tensor
        if t.is_leaf and t.id in grads:
            t.grad = grads[t.id].copy() if t.grad is None else t.grad + grads[t.id]


def grad(root, inputs):
    """Gradients of scalar ``root`` w.r.t. ``inputs`` without touching ``.grad``.

    Inputs the root does not depend on get zero arrays.
    """
    _, grads = _propagate(root)
    return [grads[t.id] if t.id in grads else np.zeros_like(t.data) for t in inputs]


# ---------------------------------------------------------------------------
# finite-difference check


def grad_check(f, x, h=1e-5, floor=1e-6):
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    ``f`` maps a Tensor to a scalar Tensor.  The relative error's denominator
    is ``max(|analytic|, |numeric|, floor)``, so coordinates whose true
    gradient is zero are judged on absolute error.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ContractError(f"grad_check: step {h} outside [1e-6, 1e-3]")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    (analytic,) = grad(f(probe), [probe])

    flat = base.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += h
        minus = flat.copy()
        minus[i] -= h
        fp = f(Tensor(plus.reshape(base.shape))).item()
        fm = f(Tensor(minus.reshape(base.shape))).item()
        numeric[i] = (fp - fm) / (2.0 * h)
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
