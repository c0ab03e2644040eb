"""Graph nodes and reverse-mode accumulation."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Node:
    """A value in the computation graph.

    ``grad`` is the adjoint accumulator; it has the shape of ``value`` once
    :func:`backward` has visited the node. ``backward_fn`` maps the output
    adjoint to one adjoint (or ``None``) per parent.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")
    # make ndarray <op> Node dispatch to the Node's reflected operator
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence["Node"] = (),
        backward_fn: Callable | None = None,
        op: str = "leaf",
        requires_grad: bool = False,
    ):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape}, dtype={self.value.dtype})"

    # Arithmetic sugar; the ops module registers the implementations.
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, key):
        return _ops().index(self, key)


def _ops():
    from . import ops

    return ops


class Parameter(Node):
    """A named leaf Node holding trainable (or frozen) state."""

    __slots__ = ("name", "trainable")

    def __init__(self, value: np.ndarray, name: str, trainable: bool = True):
        super().__init__(np.asarray(value), op="param", requires_grad=True)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


def constant(value, dtype=None) -> Node:
    return Node(np.asarray(value, dtype=dtype))


def make_node(value, parents, backward_fn, op) -> Node:
    """Create an op output, recording the edge only when some parent needs it."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Node(value, parents, backward_fn, op, requires_grad=True)
    return Node(value, op=op)


def topological_order(root: Node) -> list[Node]:
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node, params: Iterable[Parameter] | None = None) -> dict[str, np.ndarray]:
    """Accumulate adjoints of ``loss`` into every reachable node.

    Returns a map parameter name -> gradient. Parameters passed in ``params``
    that the loss does not depend on get an all-zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        if g is None or node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg

    grads: dict[str, np.ndarray] = {}
    for node in order:
        if isinstance(node, Parameter):
            grads[node.name] = node.grad if node.grad is not None else np.zeros_like(node.value)
    if params is not None:
        for p in params:
            if p.name not in grads:
                p.grad = np.zeros_like(p.value)
                grads[p.name] = p.grad
    return grads
