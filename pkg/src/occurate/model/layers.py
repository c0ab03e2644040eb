"""Parameter containers and the building blocks shared by both networks."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Node, Parameter, ops


class Module:
    """Holds Parameters and sub-Modules as attributes; names are attribute paths."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out.append((path, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(path + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, sub in enumerate(val):
                    out.extend(sub.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def _rename(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if arrays[name].shape != p.value.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.value.shape}")
            p.value = np.array(arrays[name], dtype=p.value.dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.value = p.value.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.parameters()[0].value.dtype


def _param(value, dtype) -> Parameter:
    # real names are assigned by Module._rename once the tree is built
    return Parameter(np.asarray(value, dtype=dtype), name="?")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(d_in, d_out)), dtype)
        self.bias = _param(np.zeros(d_out), dtype) if bias else None

    def __call__(self, x: Node) -> Node:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=False, dtype=np.float32):
        std = math.sqrt(2.0 / (c_in * k * k))  # He init for relu stacks
        self.weight = _param(rng.normal(0.0, std, size=(c_out, c_in, k, k)), dtype)
        self.bias = _param(np.zeros(c_out), dtype) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x: Node) -> Node:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, dtype=np.float32):
        self.groups = min(groups, channels)
        while channels % self.groups:
            self.groups -= 1
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)

    def __call__(self, x: Node) -> Node:
        return ops.group_norm(x, self.groups, self.gamma, self.beta)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32):
        self.gamma = _param(np.ones(d), dtype)
        self.beta = _param(np.zeros(d), dtype)

    def __call__(self, x: Node) -> Node:
        return ops.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, rows: int, d: int, rng, std: float = 0.02, dtype=np.float32):
        self.table = _param(rng.normal(0.0, std, size=(rows, d)), dtype)

    def __call__(self, ids) -> Node:
        return ops.embedding(self.table, ids)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng, dtype=np.float32):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(d, 3 * d, rng, dtype)
        self.out = Linear(d, d, rng, dtype)

    def __call__(self, x: Node) -> Node:
        b, t, d = x.shape
        h = self.heads
        qkv = ops.reshape(self.qkv(x), (b, t, 3, h, d // h))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, h, T, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        y = ops.scaled_dot_product_attention(q, k, v)  # (B, h, T, dh)
        y = ops.reshape(ops.transpose(y, (0, 2, 1, 3)), (b, t, d))
        return self.out(y)


class EncoderLayer(Module):
    """Pre-norm transformer encoder layer (attention + GELU feed-forward)."""

    def __init__(self, d: int, heads: int, d_ff: int, rng, dtype=np.float32):
        self.norm1 = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(d, heads, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.ff1 = Linear(d, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d, rng, dtype)

    def __call__(self, x: Node) -> Node:
        x = x + self.attn(self.norm1(x))
        return x + self.ff2(ops.gelu(self.ff1(self.norm2(x))))


class ResidualBlock(Module):
    def __init__(self, c_in: int, c_out: int, stride: int, groups: int, rng, dtype=np.float32):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, dtype=dtype)
        self.norm1 = GroupNorm(c_out, groups, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.norm2 = GroupNorm(c_out, groups, dtype)
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, padding=0, dtype=dtype)
            self.proj_norm = GroupNorm(c_out, groups, dtype)
        else:
            self.proj = None

    def __call__(self, x: Node) -> Node:
        y = ops.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        skip = self.proj_norm(self.proj(x)) if self.proj is not None else x
        return ops.relu(y + skip)
