"""Hierarchical shifted-window transformer encoder.

Stage s halves the grid side and doubles the channel width of stage s-1.
Blocks alternate plain window attention (even index) with shifted-window
attention (odd index); when the effective window covers the whole grid the
block degenerates to global attention and no shift is applied.
"""
from __future__ import annotations

import math

import numpy as np

from . import macs
from .autodiff import (Tensor, add, index_rows, layer_norm, matmul, permute,
                       reshape, roll, scale, softmax, gelu)
from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .module import LayerNormParams, Linear, Module, parameter, trunc_normal


# ---------------------------------------------------------------------------
# window bookkeeping
# ---------------------------------------------------------------------------

def window_partition(x: Tensor, m: int) -> Tensor:
    """(B, H, W, C) -> (B*nW, M*M, C) over non-overlapping MxM windows."""
    b, h, w, c = x.shape
    if h % m or w % m:
        raise ConfigError(f"grid {h}x{w} not divisible by window {m}")
    x = reshape(x, (b, h // m, m, w // m, m, c))
    x = permute(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b * (h // m) * (w // m), m * m, c))


def window_reverse(windows: Tensor, m: int, h: int, w: int) -> Tensor:
    """Exact inverse of window_partition."""
    nw = (h // m) * (w // m)
    b = windows.shape[0] // nw
    x = reshape(windows, (b, h // m, w // m, m, m, windows.shape[-1]))
    x = permute(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b, h, w, windows.shape[-1]))


def _region_labels(h: int, w: int, m: int) -> np.ndarray:
    """Pre-shift region labels: the 3x3 band tiling induced by shift s=m//2."""
    s = m // 2
    labels = np.zeros((h, w), dtype=np.int64)

    def bands(n: int) -> list[tuple[int, int, int]]:
        return [(0, s, 0), (s, n - m + s, 1), (n - m + s, n, 2)]

    for r0, r1, ri in bands(h):
        for c0, c1, ci in bands(w):
            labels[r0:r1, c0:c1] = ri * 3 + ci
    return labels


def build_shift_mask(h: int, w: int, m: int, dtype=np.float64) -> np.ndarray:
    """Additive attention mask (nW, M*M, M*M): 0 within a pre-shift region,
    -inf across regions. Zero everywhere when the shift is zero."""
    s = m // 2
    nw = (h // m) * (w // m)
    if s == 0:
        return np.zeros((nw, m * m, m * m), dtype=dtype)
    labels = _region_labels(h, w, m)
    labels = np.roll(labels, (-s, -s), axis=(0, 1))
    lw = labels.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(nw, m * m)
    diff = lw[:, :, None] != lw[:, None, :]
    mask = np.zeros((nw, m * m, m * m), dtype=dtype)
    mask[diff] = -np.inf
    return mask


def relative_position_index(m: int) -> np.ndarray:
    """(M*M, M*M) index into the (2M-1)^2 relative-offset bias table."""
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.transpose(1, 2, 0) + (m - 1)
    return (rel[:, :, 0] * (2 * m - 1) + rel[:, :, 1]).astype(np.intp)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

class WindowAttention(Module):
    """Multi-head self-attention within windows, with learned relative bias."""

    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator, dtype):
        if dim % heads:
            raise ConfigError(f"heads {heads} do not divide channels {dim}")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)
        self.bias_table = parameter(
            trunc_normal(rng, ((2 * window - 1) ** 2, heads)), dtype)
        self.rel_index = relative_position_index(window)

    def forward(self, xw: Tensor, mask: Tensor | None = None) -> Tensor:
        nwb, n, c = xw.shape
        if n != self.window * self.window:
            raise ShapeError(f"expected {self.window ** 2} tokens per window, got {n}")
        h, d = self.heads, self.head_dim

        def split_heads(t: Tensor) -> Tensor:
            return permute(reshape(t, (nwb, n, h, d)), (0, 2, 1, 3))

        q = split_heads(self.wq(xw))
        k = split_heads(self.wk(xw))
        v = split_heads(self.wv(xw))

        with macs.scope("attn_matmul"):
            logits = matmul(q, permute(k, (0, 1, 3, 2)))
        logits = scale(logits, 1.0 / math.sqrt(d))

        bias = index_rows(self.bias_table, self.rel_index.reshape(-1))
        bias = permute(reshape(bias, (n, n, h)), (2, 0, 1))
        logits = add(logits, reshape(bias, (1, h, n, n)))

        if mask is not None:
            nw = mask.shape[0]
            b = nwb // nw
            logits = reshape(logits, (b, nw, h, n, n))
            logits = add(logits, reshape(mask, (1, nw, 1, n, n)))
            logits = reshape(logits, (nwb, h, n, n))

        attn = softmax(logits, axis=-1)
        with macs.scope("attn_matmul"):
            out = matmul(attn, v)
        out = reshape(permute(out, (0, 2, 1, 3)), (nwb, n, c))
        return self.proj(out)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class SwinBlock(Module):
    """Pre-norm attention + MLP with residuals on (B, N, C) tokens."""

    def __init__(self, dim: int, heads: int, grid: int, window: int, shifted: bool,
                 mlp_ratio: float, rng: np.random.Generator, dtype):
        m_eff = min(window, grid)
        if grid % m_eff:
            raise ConfigError(f"grid {grid} not divisible by effective window {m_eff}")
        self.grid = grid
        self.window = m_eff
        self.shift = m_eff // 2 if (shifted and m_eff < grid) else 0
        self.norm1 = LayerNormParams(dim, dtype)
        self.attn = WindowAttention(dim, heads, m_eff, rng, dtype)
        self.norm2 = LayerNormParams(dim, dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng, dtype)
        if self.shift > 0:
            self.mask = Tensor(build_shift_mask(grid, grid, m_eff, dtype=dtype))
        else:
            self.mask = None

    def attend(self, x: Tensor) -> Tensor:
        """Cyclic shift, window partition, attention, reverse, unshift on (B,H,W,C)."""
        g = self.grid
        if self.shift:
            x = roll(x, (-self.shift, -self.shift), (1, 2))
        xw = window_partition(x, self.window)
        xw = self.attn(xw, self.mask)
        x = window_reverse(xw, self.window, g, g)
        if self.shift:
            x = roll(x, (self.shift, self.shift), (1, 2))
        return x

    def forward(self, z: Tensor) -> Tensor:
        b, n, c = z.shape
        g = self.grid
        if n != g * g:
            raise ShapeError(f"expected {g * g} tokens, got {n}")
        x = layer_norm(z, self.norm1.gamma, self.norm1.beta)
        x = self.attend(reshape(x, (b, g, g, c)))
        z = add(z, reshape(x, (b, n, c)))
        y = layer_norm(z, self.norm2.gamma, self.norm2.beta)
        return add(z, self.mlp(y))


class PatchMerging(Module):
    """Concatenate 2x2 token neighborhoods, normalize, project 4C -> 2C."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype):
        self.norm = LayerNormParams(4 * dim, dtype)
        self.reduction = Linear(4 * dim, 2 * dim, rng, dtype, bias=False)

    def forward(self, z: Tensor, grid: int) -> Tensor:
        b, n, c = z.shape
        if grid % 2:
            raise ConfigError(f"patch merge requires an even grid, got {grid}")
        if n != grid * grid:
            raise ShapeError(f"expected {grid * grid} tokens, got {n}")
        x = reshape(z, (b, grid // 2, 2, grid // 2, 2, c))
        x = permute(x, (0, 1, 3, 2, 4, 5))
        x = reshape(x, (b, (grid // 2) ** 2, 4 * c))
        x = layer_norm(x, self.norm.gamma, self.norm.beta)
        return self.reduction(x)


class PatchEmbed(Module):
    """Non-overlapping PxP patches, linear projection, layer norm."""

    def __init__(self, patch: int, dim: int, rng: np.random.Generator, dtype, in_ch: int = 3):
        self.patch = patch
        self.in_ch = in_ch
        self.proj = Linear(in_ch * patch * patch, dim, rng, dtype)
        self.norm = LayerNormParams(dim, dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        p = self.patch
        if c != self.in_ch:
            raise ShapeError(f"expected {self.in_ch}-channel input, got {c}")
        if h % p or w % p:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
        x = reshape(x, (b, c, h // p, p, w // p, p))
        x = permute(x, (0, 2, 4, 1, 3, 5))
        x = reshape(x, (b, (h // p) * (w // p), c * p * p))
        x = self.proj(x)
        return layer_norm(x, self.norm.gamma, self.norm.beta)


class Encoder(Module):
    """Patch embedding plus the full stage stack; returns per-stage tokens."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        cfg.validate()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.base_channels, rng, dtype)
        self.stages: list[list[SwinBlock]] = []
        self.merges: list[PatchMerging] = []
        for i, st in enumerate(cfg.stages):
            blocks = [
                SwinBlock(st.channels, st.heads, st.grid, cfg.window,
                          shifted=(j % 2 == 1), mlp_ratio=cfg.mlp_ratio,
                          rng=rng, dtype=dtype)
                for j in range(st.depth)
            ]
            self.stages.append(blocks)
            if i + 1 < len(cfg.stages):
                self.merges.append(PatchMerging(st.channels, rng, dtype))

    def named_parameters(self, prefix: str = ""):
        base = f"{prefix}." if prefix else ""
        yield from self.patch_embed.named_parameters(base + "patch_embed")
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                yield from blk.named_parameters(f"{base}stage{i + 1}.block{j}")
        for i, merge in enumerate(self.merges):
            yield from merge.named_parameters(f"{base}merge{i + 1}")

    def forward(self, x: Tensor) -> list[Tensor]:
        cfg = self.cfg
        tokens = self.patch_embed(x)
        outputs = []
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                tokens = blk(tokens)
            outputs.append(tokens)
            if i < len(self.merges):
                tokens = self.merges[i](tokens, cfg.stages[i].grid)
        return outputs


def tokens_to_map(z: Tensor, grid: int) -> Tensor:
    """(B, N, C) tokens -> (B, C, H, W) feature map."""
    b, n, c = z.shape
    if n != grid * grid:
        raise ShapeError(f"{n} tokens do not form a {grid}x{grid} grid")
    return permute(reshape(z, (b, grid, grid, c)), (0, 3, 1, 2))


def map_to_tokens(m: Tensor) -> Tensor:
    """(B, C, H, W) feature map -> (B, H*W, C) tokens."""
    b, c, h, w = m.shape
    return reshape(permute(m, (0, 2, 3, 1)), (b, h * w, c))


def encode(encoder: Encoder, x: Tensor) -> tuple[list[Tensor], list[Tensor]]:
    """Stage tokens plus their spatial skip maps."""
    tokens = encoder(x)
    maps = [tokens_to_map(z, st.grid) for z, st in zip(tokens, encoder.cfg.stages)]
    return tokens, maps
