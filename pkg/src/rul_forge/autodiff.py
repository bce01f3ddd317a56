"""Dense float64 tensors with a reverse-mode tape.

A :class:`Graph` records every operation applied to its nodes. Calling
:meth:`Graph.backward` sweeps the record in reverse creation order and
accumulates gradients additively, so a node consumed ``k`` times receives the
sum of ``k`` upstream contributions.

Every operation is registered in :data:`RULES` as a ``(forward, backward)``
pair. ``backward(grad_out, output_value, *input_values, **attrs)`` returns one
gradient per input. Tests may swap a rule in :data:`RULES` to check that the
gradient checker notices.

Broadcasting is deliberately absent apart from python-scalar operands: use
:func:`broadcast_rows` / :func:`broadcast_cols` to expand vectors explicitly.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Node:
    """One value on a tape: a leaf (parameter/constant) or an operation output."""

    __slots__ = ("graph", "id", "op", "value", "inputs", "attrs", "requires_grad", "grad")

    def __init__(self, graph, op, value, inputs=(), attrs=None, requires_grad=False):
        self.graph = graph
        self.op = op
        self.value = value
        self.inputs = inputs
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self.grad = None
        self.id = graph._register(self)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Single-threaded operation tape. Build one per step, never share it."""

    def __init__(self):
        self.nodes: List[Node] = []

    def _register(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def param(self, value) -> Node:
        """Leaf that receives a gradient."""
        return Node(self, "leaf", _as_array(value), requires_grad=True)

    def constant(self, value) -> Node:
        """Leaf that never receives a gradient."""
        return Node(self, "const", _as_array(value), requires_grad=False)

    def backward(self, loss: Node) -> Dict[int, np.ndarray]:
        """Reverse sweep from a scalar ``loss``; returns ``{node id: gradient}``.

        Gradients are also stored on ``node.grad`` for every node that needs one.
        """
        if loss.graph is not self:
            raise ValueError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss.id] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None:
                continue
            node.grad = g
            if not node.inputs:
                continue
            _, rule = RULES[node.op]
            in_grads = rule(g, node.value, *[n.value for n in node.inputs], **node.attrs)
            for parent, pg in zip(node.inputs, in_grads):
                if not parent.requires_grad:
                    continue
                if grads[parent.id] is None:
                    grads[parent.id] = pg
                else:
                    grads[parent.id] = grads[parent.id] + pg
        return {i: g for i, g in enumerate(grads) if g is not None}


def _as_array(value) -> np.ndarray:
    arr = np.array(value, dtype=DTYPE)
    arr.setflags(write=False)
    return arr


def _check_same(op, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# forward / backward rules
# ---------------------------------------------------------------------------


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _concat_fwd(*xs, axis):
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(
            s != r for d, (s, r) in enumerate(zip(x.shape, ref)) if d != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}")
    return np.concatenate(xs, axis=axis)


def _concat_bwd(g, out, *xs, axis):
    offsets = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return np.split(g, offsets, axis=axis)


def _mean_fwd(x):
    if x.size == 0:
        raise ValueError("reduce_mean of an empty tensor")
    return np.array(x.mean())


def _row_mean_fwd(x):
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"row_mean: expected a non-empty 2-D tensor, got {x.shape}")
    return x.mean(axis=1, keepdims=True)


def _broadcast_rows_fwd(v, n):
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows: expected a vector, got {v.shape}")
    return np.tile(v, (n, 1))


def _broadcast_cols_fwd(c, n):
    if c.ndim != 2 or c.shape[1] != 1:
        raise ShapeError(f"broadcast_cols: expected a column (m, 1), got {c.shape}")
    return np.tile(c, (1, n))


def _slice_cols_fwd(x, start, stop):
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for {x.shape}")
    return x[:, start:stop].copy()


def _slice_cols_bwd(g, out, x, start, stop):
    full = np.zeros_like(x)
    full[:, start:stop] = g
    return (full,)


def _reshape_fwd(x, shape):
    return x.reshape(shape)


def _binary(op):
    def fwd(a, b):
        _check_same(op, a, b)
        return FORWARD_FUNCS[op](a, b)

    return fwd


FORWARD_FUNCS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}

Rule = Tuple[Callable[..., np.ndarray], Callable[..., Sequence[np.ndarray]]]

RULES: Dict[str, Rule] = {
    "matmul": (_matmul_fwd, lambda g, out, a, b: (g @ b.T, a.T @ g)),
    "add": (_binary("add"), lambda g, out, a, b: (g, g)),
    "sub": (_binary("sub"), lambda g, out, a, b: (g, -g)),
    "mul": (_binary("mul"), lambda g, out, a, b: (g * b, g * a)),
    "div": (_binary("div"), lambda g, out, a, b: (g / b, -g * a / (b * b))),
    "add_scalar": (lambda x, c: x + c, lambda g, out, x, c: (g,)),
    "mul_scalar": (lambda x, c: x * c, lambda g, out, x, c: (g * c,)),
    "sigmoid": (_sigmoid, lambda g, out, x: (g * out * (1.0 - out),)),
    "tanh": (np.tanh, lambda g, out, x: (g * (1.0 - out * out),)),
    # relu'(0) is 0
    "relu": (lambda x: np.maximum(x, 0.0), lambda g, out, x: (g * (x > 0.0),)),
    "sqrt": (np.sqrt, lambda g, out, x: (g * 0.5 / out,)),
    "concat": (_concat_fwd, _concat_bwd),
    "reduce_mean": (_mean_fwd, lambda g, out, x: (np.full_like(x, float(g) / x.size),)),
    "reduce_sum": (lambda x: np.array(x.sum()), lambda g, out, x: (np.full_like(x, float(g)),)),
    "row_mean": (_row_mean_fwd, lambda g, out, x: (np.tile(g / x.shape[1], (1, x.shape[1])),)),
    "broadcast_rows": (_broadcast_rows_fwd, lambda g, out, v, n: (g.sum(axis=0),)),
    "broadcast_cols": (_broadcast_cols_fwd, lambda g, out, c, n: (g.sum(axis=1, keepdims=True),)),
    "slice_cols": (_slice_cols_fwd, _slice_cols_bwd),
    "reshape": (_reshape_fwd, lambda g, out, x, shape: (g.reshape(x.shape),)),
}


def apply(op: str, *inputs: Node, **attrs) -> Node:
    """Run ``op`` forward and record it on the inputs' graph."""
    graph = inputs[0].graph
    for n in inputs[1:]:
        if n.graph is not graph:
            raise ValueError(f"{op}: operands live on different graphs")
    forward, _ = RULES[op]
    value = forward(*[n.value for n in inputs], **attrs)
    value = np.asarray(value, dtype=DTYPE)
    needs = any(n.requires_grad for n in inputs)
    return Node(graph, op, value, tuple(inputs), attrs, requires_grad=needs)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def matmul(a: Node, b: Node) -> Node:
    return apply("matmul", a, b)


def add(a, b) -> Node:
    if _scalar(b):
        return apply("add_scalar", a, c=float(b))
    if _scalar(a):
        return apply("add_scalar", b, c=float(a))
    return apply("add", a, b)


def sub(a, b) -> Node:
    if _scalar(b):
        return apply("add_scalar", a, c=-float(b))
    return apply("sub", a, b)


def mul(a, b) -> Node:
    if _scalar(b):
        return apply("mul_scalar", a, c=float(b))
    if _scalar(a):
        return apply("mul_scalar", b, c=float(a))
    return apply("mul", a, b)


def div(a: Node, b: Node) -> Node:
    if _scalar(b):
        return apply("mul_scalar", a, c=1.0 / float(b))
    return apply("div", a, b)


def sigmoid(x: Node) -> Node:
    return apply("sigmoid", x)


def tanh(x: Node) -> Node:
    return apply("tanh", x)


def relu(x: Node) -> Node:
    return apply("relu", x)


def sqrt(x: Node) -> Node:
    return apply("sqrt", x)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    if len(nodes) == 0:
        raise ShapeError("concat of zero tensors")
    if len(nodes) == 1:
        return nodes[0]
    return apply("concat", *nodes, axis=axis)


def reduce_mean(x: Node) -> Node:
    return apply("reduce_mean", x)


def reduce_sum(x: Node) -> Node:
    return apply("reduce_sum", x)


def row_mean(x: Node) -> Node:
    """Mean over the last axis of a 2-D tensor, kept as an (m, 1) column."""
    return apply("row_mean", x)


def broadcast_rows(v: Node, n: int) -> Node:
    """Stack a length-k vector into an (n, k) matrix."""
    return apply("broadcast_rows", v, n=int(n))


def broadcast_cols(c: Node, n: int) -> Node:
    """Repeat an (m, 1) column into an (m, n) matrix."""
    return apply("broadcast_cols", c, n=int(n))


def slice_cols(x: Node, start: int, stop: int) -> Node:
    return apply("slice_cols", x, start=int(start), stop=int(stop))


def reshape(x: Node, shape) -> Node:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.value.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return apply("reshape", x, shape=shape)
