"""Decoder: patch expansion, convolutional skip fusion, segmentation head."""
from __future__ import annotations

import numpy as np

from .autodiff import (Tensor, concat, conv2d, group_norm, permute, relu,
                       reshape, sigmoid, upsample_bilinear_2x)
from .errors import ConfigError, ShapeError
from .module import Conv2dParams, GroupNormParams, Linear, Module


class PatchExpand(Module):
    """(B, N, C) -> (B, 4N, C/2): project C->2C, spread into 2x2 blocks."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype):
        if dim % 2:
            raise ConfigError(f"patch expand requires even channels, got {dim}")
        self.dim = dim
        self.expand = Linear(dim, 2 * dim, rng, dtype, bias=False)

    def forward(self, z: Tensor, grid: int) -> Tensor:
        b, n, c = z.shape
        if c != self.dim:
            raise ShapeError(f"expected {self.dim} channels, got {c}")
        if n != grid * grid:
            raise ShapeError(f"{n} tokens do not form a {grid}x{grid} grid")
        half = c // 2
        x = self.expand(z)
        x = reshape(x, (b, grid, grid, 2, 2, half))
        x = permute(x, (0, 1, 3, 2, 4, 5))
        return reshape(x, (b, 4 * n, half))


class ConvFuse(Module):
    """Concat skip and upsampled maps, refine with two 3x3 conv+GN+ReLU."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype):
        self.channels = channels
        self.conv1 = Conv2dParams(2 * channels, channels, 3, rng, dtype)
        self.gn1 = GroupNormParams(channels, dtype)
        self.conv2 = Conv2dParams(channels, channels, 3, rng, dtype)
        self.gn2 = GroupNormParams(channels, dtype)

    def forward(self, skip: Tensor, up: Tensor) -> Tensor:
        if skip.shape != up.shape:
            raise ShapeError(f"conv fuse shapes disagree: {skip.shape} vs {up.shape}")
        if skip.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {skip.shape[1]}")
        x = concat([skip, up], axis=1)
        x = conv2d(x, self.conv1.w, self.conv1.b)
        x = relu(group_norm(x, self.gn1.gamma, self.gn1.beta, self.gn1.groups))
        x = conv2d(x, self.conv2.w, self.conv2.b)
        return relu(group_norm(x, self.gn2.gamma, self.gn2.beta, self.gn2.groups))


class SegmentationHead(Module):
    """Bilinear x2 upsample, 1x1 conv to one channel, sigmoid."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype):
        self.conv = Conv2dParams(channels, 1, 1, rng, dtype)

    def forward(self, y0: Tensor) -> tuple[Tensor, Tensor]:
        up = upsample_bilinear_2x(y0)
        logits = conv2d(up, self.conv.w, self.conv.b)
        return logits, sigmoid(logits)
