"""Layers built on :mod:`activepc.tensor`: linear maps, layer norm, MLPs and a
pre-norm transformer encoder."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as tc
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container that discovers parameters and submodules by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in state]
        extra = [k for k in state if k not in own]
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={missing} extra={extra}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: checkpoint {state[k].shape} vs model {p.shape}")
        for k, p in own.items():
            p.data = np.array(state[k], dtype=p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(rng.uniform(-bound, bound, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise tc.ShapeError(f"Linear: expected last dim {self.in_features}, got input {x.shape}")
        y = tc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(width))
        self.bias = Parameter(np.zeros(width))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tc.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = tc.relu(x)
        return x


class MultiHeadAttention(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = Linear(width, 3 * width, rng)
        self.proj = Linear(width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        h = self.heads
        d = c // h
        qkv = self.qkv(x).reshape(b, n, 3, h, d).transpose(2, 0, 3, 1, 4)  # (3, b, h, n, d)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = tc.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
        attn = tc.softmax(scores, axis=-1)
        out = tc.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, c)
        return self.proj(out)


class EncoderBlock(Module):
    def __init__(self, width: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads, rng)
        self.norm2 = LayerNorm(width)
        self.mlp = MLP([width, mlp_ratio * width, width], rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerEncoder(Module):
    """Pre-norm encoder over (batch, tokens, width).  Depth 0 is the identity."""

    def __init__(self, width: int, depth: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.blocks = [EncoderBlock(width, heads, mlp_ratio, rng) for _ in range(depth)]
        self.norm = LayerNorm(width) if depth else None

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.norm(x) if self.norm is not None else x
