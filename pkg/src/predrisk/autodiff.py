"""Reverse-mode automatic differentiation on numpy arrays (rank <= 2).

A fresh graph is built per optimization step (losses change shape with the
sample count), so nodes are cheap: value, parent refs, and a backward
closure. ``stop_gradient`` passes its value through and cuts the graph, which
is what the variance-corrected loss needs for its frozen weights.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Node",
    "GradientNaNError",
    "as_node",
    "stop_gradient",
    "exp",
    "log",
    "tanh",
    "elu",
    "leaky_relu",
    "matmul",
    "sum_",
    "mean_",
    "max_",
    "logsumexp",
    "logmeanexp",
    "take_row",
    "slice1d",
    "reshape",
    "concat",
    "stack_rows",
    "grad",
    "finite_diff_check",
]


class GradientNaNError(RuntimeError):
    """Raised when a NaN shows up in a value or gradient, with the op named."""


class Node:
    __slots__ = ("value", "grad", "_parents", "_backward", "op")

    def __init__(self, value, parents=(), op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # Arithmetic sugar; scalars and arrays are wrapped as constant leaves.
    def __add__(self, other):
        return add(self, as_node(other))

    def __radd__(self, other):
        return add(as_node(other), self)

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        return mul(self, as_node(other))

    def __rmul__(self, other):
        return mul(as_node(other), self)

    def __truediv__(self, other):
        return div(self, as_node(other))

    def __rtruediv__(self, other):
        return div(as_node(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, as_node(other))


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, op="const")


def _accumulate(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        node.grad = node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Node, b: Node) -> Node:
    out = Node(a.value + b.value, (a, b), "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    out._backward = backward
    return out


def sub(a: Node, b: Node) -> Node:
    out = Node(a.value - b.value, (a, b), "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))

    out._backward = backward
    return out


def mul(a: Node, b: Node) -> Node:
    out = Node(a.value * b.value, (a, b), "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    out._backward = backward
    return out


def div(a: Node, b: Node) -> Node:
    out = Node(a.value / b.value, (a, b), "div")

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        _accumulate(b, _unbroadcast(-g * out.value / b.value, b.value.shape))

    out._backward = backward
    return out


def neg(a: Node) -> Node:
    out = Node(-a.value, (a,), "neg")

    def backward(g):
        _accumulate(a, -g)

    out._backward = backward
    return out


def power(a: Node, p: float) -> Node:
    if isinstance(p, Node):
        raise TypeError("only constant exponents are supported")
    out = Node(a.value**p, (a,), "power")

    def backward(g):
        _accumulate(a, g * p * a.value ** (p - 1))

    out._backward = backward
    return out


def exp(a: Node) -> Node:
    out = Node(np.exp(a.value), (a,), "exp")

    def backward(g):
        _accumulate(a, g * out.value)

    out._backward = backward
    return out


def log(a: Node) -> Node:
    out = Node(np.log(a.value), (a,), "log")

    def backward(g):
        _accumulate(a, g / a.value)

    out._backward = backward
    return out


def tanh(a: Node) -> Node:
    out = Node(np.tanh(a.value), (a,), "tanh")

    def backward(g):
        _accumulate(a, g * (1.0 - out.value**2))

    out._backward = backward
    return out


def elu(a: Node) -> Node:
    """Exponential linear unit with alpha = 1."""
    pos = a.value > 0
    ex = np.exp(np.where(pos, 0.0, a.value))
    out = Node(np.where(pos, a.value, ex - 1.0), (a,), "elu")

    def backward(g):
        _accumulate(a, g * np.where(pos, 1.0, ex))

    out._backward = backward
    return out


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    pos = a.value > 0
    out = Node(np.where(pos, a.value, slope * a.value), (a,), "leaky_relu")

    def backward(g):
        _accumulate(a, g * np.where(pos, 1.0, slope))

    out._backward = backward
    return out


def matmul(a: Node, b: Node) -> Node:
    out = Node(a.value @ b.value, (a, b), "matmul")

    def backward(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    out._backward = backward
    return out


def sum_(a: Node, axis: int | None = None) -> Node:
    out = Node(np.sum(a.value, axis=axis), (a,), "sum")

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

    out._backward = backward
    return out


def mean_(a: Node, axis: int | None = None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    out = Node(np.mean(a.value, axis=axis), (a,), "mean")

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, a.value.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g / n, axis), a.value.shape))

    out._backward = backward
    return out


def max_(a: Node, axis: int | None = None) -> Node:
    """Max reduction; the subgradient routes to the lowest-index maximizer."""
    out = Node(np.max(a.value, axis=axis), (a,), "max")

    def backward(g):
        mask = np.zeros_like(a.value)
        if axis is None:
            idx = np.unravel_index(np.argmax(a.value), a.value.shape)
            mask[idx] = 1.0
            _accumulate(a, mask * g)
        else:
            idx = np.argmax(a.value, axis=axis)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            _accumulate(a, mask * np.expand_dims(g, axis))

    out._backward = backward
    return out


def logsumexp(a: Node, axis: int | None = None) -> Node:
    """Stable composite log-sum-exp; gradient is the softmax weights."""
    vmax = np.max(a.value, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    ez = np.exp(a.value - shift)
    total = np.sum(ez, axis=axis, keepdims=True)
    val = shift + np.log(total)
    softmax = ez / total
    if axis is None:
        val = val.reshape(())
    else:
        val = np.squeeze(val, axis=axis)
    out = Node(val, (a,), "logsumexp")

    def backward(g):
        if axis is None:
            _accumulate(a, softmax * g)
        else:
            _accumulate(a, softmax * np.expand_dims(g, axis))

    out._backward = backward
    return out


def logmeanexp(a: Node, axis: int | None = None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    return logsumexp(a, axis=axis) - float(np.log(n))


def stop_gradient(a: Node) -> Node:
    """Value passes through unchanged; gradient through this node is zero."""
    return Node(a.value, (), "stop_gradient")


def take_row(a: Node, i: int) -> Node:
    out = Node(a.value[i], (a,), "take_row")

    def backward(g):
        full = np.zeros_like(a.value)
        full[i] = g
        _accumulate(a, full)

    out._backward = backward
    return out


def slice1d(a: Node, start: int, stop: int) -> Node:
    out = Node(a.value[start:stop], (a,), "slice1d")

    def backward(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        _accumulate(a, full)

    out._backward = backward
    return out


def reshape(a: Node, shape: tuple) -> Node:
    out = Node(a.value.reshape(shape), (a,), "reshape")

    def backward(g):
        _accumulate(a, g.reshape(a.value.shape))

    out._backward = backward
    return out


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = list(nodes)
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), "concat")
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for node, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(node, g[tuple(sl)])

    out._backward = backward
    return out


def stack_rows(nodes: Sequence[Node]) -> Node:
    """Stack 1-D nodes of equal length into a matrix, one node per row."""
    nodes = list(nodes)
    out = Node(np.stack([n.value for n in nodes], axis=0), tuple(nodes), "stack_rows")

    def backward(g):
        for i, node in enumerate(nodes):
            _accumulate(node, g[i])

    out._backward = backward
    return out


def _topo_order(output: Node) -> list:
    order = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _raise_nan_diagnostic(order: list) -> None:
    for node in order:
        if np.isnan(node.value).any():
            parents = ", ".join(p.op for p in node._parents) or "none"
            raise GradientNaNError(
                f"NaN in forward value at op '{node.op}' (inputs: {parents})"
            )
        if node.grad is not None and np.isnan(node.grad).any():
            raise GradientNaNError(f"NaN in gradient at op '{node.op}'")
    raise GradientNaNError("NaN detected but not localized")


def grad(output: Node, inputs: Sequence[Node]) -> list:
    """Reverse-mode derivatives of a scalar output w.r.t. each input value.

    Inputs not reachable from the output get a zero gradient.
    """
    if output.value.size != 1:
        raise ValueError(f"grad requires a scalar output, got shape {output.value.shape}")
    order = _topo_order(output)
    for node in order:
        node.grad = None
    reachable = {id(node) for node in order}
    for node in inputs:
        if id(node) not in reachable:
            node.grad = None
    output.grad = np.ones_like(output.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads = [
        node.grad if node.grad is not None else np.zeros_like(node.value) for node in inputs
    ]
    if np.isnan(output.value).any() or any(np.isnan(g).any() for g in grads):
        _raise_nan_diagnostic(order)
    return grads


def finite_diff_check(
    f: Callable[[Node], Node],
    x: np.ndarray,
    eps: float = 1e-5,
    value_fn: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``value_fn`` overrides how perturbed values are computed; losses that pin
    auxiliary constants (the variance-corrected objective) pass a frozen-aux
    evaluator so the two routes differentiate the same function.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    leaf = Node(x)
    analytic = grad(f(leaf), [leaf])[0]
    if value_fn is None:
        value_fn = lambda xv: float(np.asarray(f(Node(xv)).value))
    numeric = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        numeric[i] = (value_fn(xp) - value_fn(xm)) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
