"""Forward primitives with their reverse-mode rules.

Every op takes Nodes (numpy arrays and Python scalars are promoted to
constants of the first Node's dtype) and returns a Node. Shapes that do not
fit raise ``ValueError`` naming the op and both shapes.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .node import Node, make_node


def _as_node(x, like: Node | None = None) -> Node:
    if isinstance(x, Node):
        return x
    dtype = like.value.dtype if like is not None else None
    return Node(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Node, Node]:
    if isinstance(a, Node):
        return a, _as_node(b, a)
    b = _as_node(b)
    return _as_node(a, b), b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op: str, a: Node, b: Node) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.value + b.value, (a, b), bwd, "add")


def sub(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.value - b.value, (a, b), bwd, "sub")


def mul(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)
    av, bv = a.value, b.value

    def bwd(g):
        return (
            _unbroadcast(g * bv, a.shape) if a.requires_grad else None,
            _unbroadcast(g * av, b.shape) if b.requires_grad else None,
        )

    return make_node(av * bv, (a, b), bwd, "mul")


def div(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    av, bv = a.value, b.value

    def bwd(g):
        return (
            _unbroadcast(g / bv, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * av / (bv * bv), b.shape) if b.requires_grad else None,
        )

    return make_node(av / bv, (a, b), bwd, "div")


def neg(a: Node) -> Node:
    return make_node(-a.value, (a,), lambda g: (-g,), "neg")


def relu(a: Node) -> Node:
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Node) -> Node:
    """Tanh-approximated GELU."""
    x = a.value
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_node(out.astype(x.dtype), (a,), bwd, "gelu")


def sigmoid(a: Node) -> Node:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    out = out.astype(a.dtype)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(a: Node) -> Node:
    x = a.value
    return make_node(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp values; the gradient is zero where the clamp is active."""
    x = a.value
    inside = (x >= lo) & (x <= hi)
    return make_node(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- reductions


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    shape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), bwd, "sum")


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape
    scale = 1.0 / count

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape).astype(a.dtype),)

    out = np.mean(a.value, axis=axis, keepdims=keepdims)
    return make_node(np.asarray(out, dtype=a.dtype), (a,), bwd, "mean")


def mean_pool(a: Node, grid: int = 1) -> Node:
    """Mean over spatial cells of an (N, C, H, W) map.

    ``grid=1`` is global average pooling -> (N, C). ``grid=2`` pools each
    spatial quadrant separately -> (N, 4, C), quadrants in row-major order.
    """
    if a.ndim != 4:
        raise ValueError(f"mean_pool: expected (N, C, H, W), got shape {a.shape}")
    n, c, h, w = a.shape
    if grid == 1:
        return mean(a, axis=(2, 3))
    if h % grid or w % grid:
        raise ValueError(f"mean_pool: spatial shape {(h, w)} not divisible by grid {grid}")
    x = reshape(a, (n, c, grid, h // grid, grid, w // grid))
    x = mean(x, axis=(3, 5))  # (N, C, grid, grid)
    x = reshape(x, (n, c, grid * grid))
    return transpose(x, (0, 2, 1))


# ---------------------------------------------------------------- shape ops


def reshape(a: Node, shape: tuple) -> Node:
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {old} to {shape}") from None
    return make_node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Node, axes: tuple) -> Node:
    inv = tuple(np.argsort(axes))
    return make_node(
        np.ascontiguousarray(a.value.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose"
    )


def concat(nodes: list[Node], axis: int = 0) -> Node:
    ref = nodes[0]
    for other in nodes[1:]:
        if other.ndim != ref.ndim or any(
            s != t for k, (s, t) in enumerate(zip(ref.shape, other.shape)) if k != axis % ref.ndim
        ):
            raise ValueError(f"concat: incompatible shapes {ref.shape} and {other.shape}")
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([n.value for n in nodes], axis=axis), nodes, bwd, "concat")


def index(a: Node, key) -> Node:
    """Basic or advanced indexing; the adjoint scatters back with accumulation."""
    shape = a.shape
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (slice, int)) or k is Ellipsis for k in parts)

    def bwd(g):
        out = np.zeros(shape, dtype=g.dtype)
        if basic:  # basic indexing never repeats an element
            out[key] = g
        else:
            np.add.at(out, key, g)
        return (out,)

    return make_node(a.value[key], (a,), bwd, "index")


def embedding(table: Node, ids) -> Node:
    """Gather rows of a (V, d) table by integer ids of any shape."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ValueError(f"embedding: table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding: ids out of range for table shape {table.shape}")
    shape = table.shape

    def bwd(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return make_node(table.value[ids], (table,), bwd, "embedding")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Node:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(av @ bv, (a, b), bwd, "matmul")


def linear(x: Node, weight: Node, bias: Node | None = None) -> Node:
    """x @ weight + bias with weight stored (in_features, out_features)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def softmax(a: Node, axis: int = -1) -> Node:
    x = a.value
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (a,), bwd, "softmax")


def layer_norm(a: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Normalize over the last axis, then scale and shift."""
    x = a.value
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ValueError(f"layer_norm: input shape {x.shape} vs affine shape {gamma.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gv = gamma.value
    out = xhat * gv + beta.value
    m = x.shape[-1]
    red = tuple(range(x.ndim - 1))

    def bwd(g):
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        dxhat = g * gv
        dx = rstd / m * (
            m * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return make_node(out.astype(x.dtype), (a, gamma, beta), bwd, "layer_norm")


def group_norm(a: Node, groups: int, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Normalize (N, C, ...) over channel groups and all trailing axes."""
    x = a.value
    n, c = x.shape[:2]
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"group_norm: input shape {x.shape} vs affine shape {gamma.shape}")
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gv = gamma.value.reshape(bshape)
    out = xhat * gv + beta.value.reshape(bshape)
    m = xg.shape[-1]
    red = (0,) + tuple(range(2, x.ndim))

    def bwd(g):
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        dxhat = (g * gv).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        dx = rstd / m * (
            m * dxhat - dxhat.sum(axis=-1, keepdims=True) - xh * (dxhat * xh).sum(axis=-1, keepdims=True)
        )
        return dx.reshape(x.shape), dgamma, dbeta

    return make_node(out.astype(x.dtype), (a, gamma, beta), bwd, "group_norm")


def conv2d(x: Node, weight: Node, bias: Node | None = None, stride: int = 1, padding: int = 0) -> Node:
    """2-D cross-correlation of (N, C, H, W) input with (O, C, kh, kw) weight."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: incompatible shapes {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho = kernels.out_size(h, kh, stride, padding)
    wo = kernels.out_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: kernel {weight.shape} too large for input {x.shape}")
    cols = kernels.im2col(x.value, kh, kw, stride, padding)  # (C*kh*kw, N*Ho*Wo)
    wmat = weight.value.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.value.reshape(o, 1)
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gt = g.transpose(1, 0, 2, 3).reshape(o, -1)
        dx = None
        if x.requires_grad:
            dx = kernels.col2im(wmat.T @ gt, x.shape, kh, kw, stride, padding)
        dw = (gt @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return dx, dw
        return dx, dw, gt.sum(axis=1)

    return make_node(out, parents, bwd, "conv2d")


def scaled_dot_product_attention(q: Node, k: Node, v: Node) -> Node:
    """softmax(q k^T / sqrt(d)) v over the last two axes (composed of primitives)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention: incompatible shapes {q.shape} and {k.shape}")
    d = q.shape[-1]
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = mul(matmul(q, kt), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)
