"""Parameter containers: a minimal Module tree with named parameter traversal."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .autodiff import Tensor, matmul, add


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until all values lie within 2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def parameter(data: np.ndarray, dtype, name: str = "") -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)


class Linear(Module):
    """y = x @ w (+ b); weight shape (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype, bias: bool = True, std: float = 0.02):
        self.w = parameter(trunc_normal(rng, (in_features, out_features), std), dtype)
        self.b = parameter(np.zeros(out_features), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        if self.b is not None:
            y = add(y, self.b)
        return y


class LayerNormParams(Module):
    """Learnable gamma/beta for layer_norm over a C-dim last axis."""

    def __init__(self, dim: int, dtype):
        self.gamma = parameter(np.ones(dim), dtype)
        self.beta = parameter(np.zeros(dim), dtype)


class Conv2dParams(Module):
    """Weights for conv2d: (out, in, k, k) kernel plus bias."""

    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator,
                 dtype, std: float = 0.02):
        self.w = parameter(trunc_normal(rng, (out_ch, in_ch, k, k), std), dtype)
        self.b = parameter(np.zeros(out_ch), dtype)


class GroupNormParams(Module):
    def __init__(self, channels: int, dtype, groups: Optional[int] = None):
        self.gamma = parameter(np.ones(channels), dtype)
        self.beta = parameter(np.zeros(channels), dtype)
        self.groups = groups if groups is not None else min(8, channels)
