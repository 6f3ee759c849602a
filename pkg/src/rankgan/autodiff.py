"""Reverse-mode automatic differentiation over float64 numpy arrays.

Graphs are built define-by-run. Every backward rule is itself written in
terms of differentiable ops, so a gradient computed with
``create_graph=True`` can be differentiated again (double backprop).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

Tensor = np.ndarray

_grad_enabled = True


class ShapeError(ValueError):
    pass


class AutodiffError(FloatingPointError):
    """Non-finite value met during a backward pass."""

    def __init__(self, op: str, message: str = ""):
        self.op = op
        super().__init__(message or f"non-finite gradient produced by '{op}'")


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    __slots__ = ("value", "parents", "backward", "requires_grad", "op", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Node, ...] = ()
        self.backward: Callable | None = None
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def variable(value) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=False)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value: np.ndarray, parents: Sequence[Node], backward: Callable, op: str) -> Node:
    out = Node(value, op=op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward = backward
    return out


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- shape plumbing -----------------------------------------------------------


def sum_to(x: Node, shape: tuple[int, ...]) -> Node:
    """Reduce a broadcast result back to ``shape`` (adjoint of broadcast_to)."""
    x = as_node(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    value = x.value.sum(axis=axes, keepdims=True)
    if lead:
        value = value.reshape(value.shape[lead:])
    src = x.shape

    def backward(g):
        return (broadcast_to(g, src),)

    return _make(value.reshape(shape), (x,), backward, "sum_to")


def broadcast_to(x: Node, shape: tuple[int, ...]) -> Node:
    x = as_node(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        value = np.broadcast_to(x.value, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast shape {x.shape} to {shape}") from None
    src = x.shape

    def backward(g):
        return (sum_to(g, src),)

    return _make(value, (x,), backward, "broadcast_to")


def reshape(x: Node, shape) -> Node:
    x = as_node(x)
    src = x.shape
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from None

    def backward(g):
        return (reshape(g, src),)

    return _make(value, (x,), backward, "reshape")


def transpose(x: Node) -> Node:
    x = as_node(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")

    def backward(g):
        return (transpose(g),)

    return _make(x.value.T.copy(), (x,), backward, "transpose")


def getitem(x: Node, idx) -> Node:
    x = as_node(x)
    src = x.shape

    def backward(g):
        return (scatter(g, idx, src),)

    return _make(np.array(x.value[idx]), (x,), backward, "getitem")


def scatter(g: Node, idx, shape: tuple[int, ...]) -> Node:
    """Zero array of ``shape`` with ``g`` added at ``idx`` (adjoint of getitem)."""
    g = as_node(g)
    value = np.zeros(shape)
    np.add.at(value, idx, g.value)

    def backward(gg):
        return (getitem(gg, idx),)

    return _make(value, (g,), backward, "scatter")


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    xs = [as_node(x) for x in xs]
    try:
        value = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        shapes = ", ".join(str(x.shape) for x in xs)
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * value.ndim
            sl[ax] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(sl)))
        return tuple(out)

    return _make(value, xs, backward, "concat")


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return sum_to(g, a.shape), sum_to(g, b.shape)

    return _make(a.value + b.value, (a, b), backward, "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return sum_to(g, a.shape), sum_to(neg(g), b.shape)

    return _make(a.value - b.value, (a, b), backward, "sub")


def neg(a) -> Node:
    a = as_node(a)

    def backward(g):
        return (neg(g),)

    return _make(-a.value, (a,), backward, "neg")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)

    return _make(a.value * b.value, (a, b), backward, "mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "div")

    def backward(g):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return sum_to(ga, a.shape), sum_to(gb, b.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        value = a.value / b.value
    return _make(value, (a, b), backward, "div")


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _make(a.value @ b.value, (a, b), backward, "matmul")


def square(x) -> Node:
    x = as_node(x)

    def backward(g):
        return (mul(g, mul(x, 2.0)),)

    return _make(x.value * x.value, (x,), backward, "square")


def sqrt(x) -> Node:
    x = as_node(x)
    out = None

    def backward(g):
        return (div(g, mul(out, 2.0)),)

    out = _make(np.sqrt(x.value), (x,), backward, "sqrt")
    return out


def exp(x) -> Node:
    x = as_node(x)
    out = None

    def backward(g):
        return (mul(g, out),)

    out = _make(np.exp(x.value), (x,), backward, "exp")
    return out


def log(x) -> Node:
    x = as_node(x)

    def backward(g):
        return (div(g, x),)

    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.value)
    return _make(value, (x,), backward, "log")


def tanh(x) -> Node:
    x = as_node(x)
    out = None

    def backward(g):
        return (mul(g, sub(1.0, square(out))),)

    out = _make(np.tanh(x.value), (x,), backward, "tanh")
    return out


def sigmoid(x) -> Node:
    x = as_node(x)
    out = None

    def backward(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(_stable_sigmoid(x.value), (x,), backward, "sigmoid")
    return out


def softplus(x) -> Node:
    """log(1 + exp(x)), evaluated without overflow."""
    x = as_node(x)

    def backward(g):
        return (mul(g, sigmoid(x)),)

    v = x.value
    value = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return _make(value, (x,), backward, "softplus")


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x) -> Node:
    """max(x, 0); subgradient 0 at the kink."""
    x = as_node(x)
    mask = (x.value > 0).astype(np.float64)

    def backward(g):
        return (mul(g, mask),)

    return _make(x.value * mask, (x,), backward, "relu")


def leaky_relu(x, slope: float = 0.2) -> Node:
    """Leaky rectifier; at exactly 0 the negative-slope branch applies."""
    x = as_node(x)
    factor = np.where(x.value > 0, 1.0, slope)

    def backward(g):
        return (mul(g, factor),)

    return _make(x.value * factor, (x,), backward, "leaky_relu")


def abs_(x) -> Node:
    x = as_node(x)
    sign = np.sign(x.value)

    def backward(g):
        return (mul(g, sign),)

    return _make(np.abs(x.value), (x,), backward, "abs")


def safe_reciprocal(x) -> Node:
    """1/x with the value (and derivative) defined as 0 where x == 0."""
    x = as_node(x)
    nz = x.value != 0
    out = None

    def backward(g):
        return (neg(mul(g, square(out))),)

    with np.errstate(divide="ignore"):
        value = np.where(nz, 1.0 / np.where(nz, x.value, 1.0), 0.0)
    out = _make(value, (x,), backward, "safe_reciprocal")
    return out


# -- reductions ---------------------------------------------------------------


def sum_(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    src = x.shape
    kept = np.sum(x.value, axis=axis, keepdims=True).shape

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return _make(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    count = x.value.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def l1_norm(x, axis=None, keepdims: bool = False) -> Node:
    return sum_(abs_(x), axis=axis, keepdims=keepdims)


def l2_norm(x, axis=None, keepdims: bool = False) -> Node:
    """Euclidean norm; the gradient at a zero vector is taken as 0."""
    x = as_node(x)
    kept = np.sum(x.value, axis=axis, keepdims=True).shape
    out = None

    def backward(g):
        scale = mul(reshape(g, kept), safe_reciprocal(reshape(out, kept)))
        return (mul(x, scale),)

    value = np.sqrt(np.sum(x.value * x.value, axis=axis, keepdims=keepdims))
    out = _make(value, (x,), backward, "l2_norm")
    return out


# -- gradients ----------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Node, wrt: Iterable[Node], create_graph: bool = False) -> list[Node]:
    """Gradients of a scalar ``output`` with respect to each node in ``wrt``.

    Nodes that ``output`` does not depend on receive zeros. With
    ``create_graph=True`` the returned nodes are part of a graph and can be
    passed to another ``grad`` call.
    """
    wrt = list(wrt)
    if output.value.size != 1:
        raise ShapeError(f"grad: output must be scalar, got shape {output.shape}")
    grads: dict[int, Node] = {}
    keep = {id(w) for w in wrt}
    if output.requires_grad:
        grads[id(output)] = constant(np.ones_like(output.value))
        with _grad_mode(create_graph):
            for node in reversed(_topo_order(output)):
                g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
                if g is None or node.backward is None:
                    continue
                parent_grads = node.backward(g)
                for p, pg in zip(node.parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    if not np.all(np.isfinite(pg.value)):
                        raise AutodiffError(node.op)
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(g if g is not None else constant(np.zeros_like(w.value)))
    return out


def finite_difference_check(
    f: Callable[[list[Node]], Node],
    params: Sequence[np.ndarray],
    step: float = 1e-5,
    order: int = 1,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps a list of parameter nodes to a scalar node. With ``order=1``
    the gradient of ``f`` is checked. With ``order=2`` the checked quantity
    is ``h(p) = ||grad f(p)||_2``: its double-backprop gradient is compared
    against nested central differences (inner gradient also by differences).
    """
    if not 1e-6 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-6, 1e-3], got {step}")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    params = [np.array(p, dtype=np.float64) for p in params]

    def value_of(ps: list[np.ndarray]) -> float:
        # grad mode stays on: f may take gradients internally
        v = f([constant(p) for p in ps]).item()
        if not np.isfinite(v):
            raise AutodiffError("finite_difference_check", "f returned a non-finite value")
        return v

    def fd_gradient(fn, ps: list[np.ndarray], h: float) -> list[np.ndarray]:
        out = []
        for k, p in enumerate(ps):
            gk = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = fn(ps)
                p[idx] = orig - h
                down = fn(ps)
                p[idx] = orig
                gk[idx] = (up - down) / (2 * h)
            out.append(gk)
        return out

    nodes = [variable(p) for p in params]
    if order == 1:
        ad = [g.value for g in grad(f(nodes), nodes)]
        fd = fd_gradient(value_of, params, step)
    else:
        inner = grad(f(nodes), nodes, create_graph=True)
        norm = l2_norm(concat([reshape(g, (-1,)) for g in inner]))
        ad = [g.value for g in grad(norm, nodes)]

        def inner_norm(ps):
            gs = fd_gradient(value_of, [p.copy() for p in ps], step)
            return float(np.sqrt(sum(np.sum(g * g) for g in gs)))

        fd = fd_gradient(inner_norm, params, step)
    return max(
        float(np.max(np.abs(a - d) / (np.abs(d) + 1e-8))) if a.size else 0.0
        for a, d in zip(ad, fd)
    )
