"""Brute-force reference implementations used to verify the fast paths.

Everything here is deliberately written as plain per-token/per-head numpy
loops with no reuse of the tape ops, so agreement with the windowed
implementation is meaningful evidence.
"""
from __future__ import annotations

import math

import numpy as np


def _linear(x: np.ndarray, w: np.ndarray, b) -> np.ndarray:
    y = x @ w
    if b is not None:
        y = y + b
    return y


def reference_attention(tokens: np.ndarray, coords: np.ndarray, wq, bq, wk, bk,
                        wv, bv, wo, bo, heads: int, bias_table, window_m: int) -> np.ndarray:
    """Full multi-head attention over an arbitrary token set.

    tokens: (B, N, C); coords: (N, 2) grid positions used to look up the
    relative-offset bias. bias_table may be None for bias-free attention.
    """
    b, n, c = tokens.shape
    d = c // heads
    out = np.zeros_like(tokens)
    for bi in range(b):
        q = _linear(tokens[bi], wq, bq)
        k = _linear(tokens[bi], wk, bk)
        v = _linear(tokens[bi], wv, bv)
        merged = np.zeros((n, c), dtype=tokens.dtype)
        for h in range(heads):
            qh = q[:, h * d:(h + 1) * d]
            kh = k[:, h * d:(h + 1) * d]
            vh = v[:, h * d:(h + 1) * d]
            logits = np.zeros((n, n), dtype=np.float64)
            for i in range(n):
                for j in range(n):
                    logits[i, j] = float(qh[i] @ kh[j]) / math.sqrt(d)
                    if bias_table is not None:
                        dr = int(coords[i, 0] - coords[j, 0]) + window_m - 1
                        dc = int(coords[i, 1] - coords[j, 1]) + window_m - 1
                        logits[i, j] += float(bias_table[dr * (2 * window_m - 1) + dc, h])
            logits -= logits.max(axis=1, keepdims=True)
            weights = np.exp(logits)
            weights /= weights.sum(axis=1, keepdims=True)
            merged[:, h * d:(h + 1) * d] = (weights @ vh).astype(tokens.dtype)
        out[bi] = _linear(merged, wo, bo)
    return out


def region_label(r: int, c: int, h: int, w: int, m: int) -> int:
    """Pre-shift region of a pixel for shift s = m // 2 (scalar re-derivation)."""
    s = m // 2

    def band(pos: int, n: int) -> int:
        if pos < s:
            return 0
        if pos < n - m + s:
            return 1
        return 2

    return band(r, h) * 3 + band(c, w)


def shifted_window_attention_oracle(grid: np.ndarray, attn_module) -> np.ndarray:
    """Run unmasked attention independently inside every pre-shift region.

    grid: (B, H, W, C). attn_module supplies the projection weights, head
    count, window size and bias table of the implementation under test.
    """
    b, h, w, c = grid.shape
    m = attn_module.window
    wq, bq = attn_module.wq.w.data, attn_module.wq.b.data
    wk, bk = attn_module.wk.w.data, attn_module.wk.b.data
    wv, bv = attn_module.wv.w.data, attn_module.wv.b.data
    wo, bo = attn_module.proj.w.data, attn_module.proj.b.data
    table = attn_module.bias_table.data

    labels = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        for cc in range(w):
            labels[r, cc] = region_label(r, cc, h, w, m)

    out = np.zeros_like(grid)
    for lab in np.unique(labels):
        rows, cols = np.nonzero(labels == lab)
        coords = np.stack([rows, cols], axis=1)
        tokens = grid[:, rows, cols, :]
        res = reference_attention(tokens, coords, wq, bq, wk, bk, wv, bv, wo, bo,
                                  attn_module.heads, table, m)
        out[:, rows, cols, :] = res
    return out


def global_attention_oracle(grid: np.ndarray, attn_module) -> np.ndarray:
    """Unwindowed attention over the whole grid (window must cover it)."""
    b, h, w, c = grid.shape
    rows, cols = np.nonzero(np.ones((h, w), dtype=bool))
    coords = np.stack([rows, cols], axis=1)
    tokens = grid[:, rows, cols, :]
    res = reference_attention(
        tokens, coords,
        attn_module.wq.w.data, attn_module.wq.b.data,
        attn_module.wk.w.data, attn_module.wk.b.data,
        attn_module.wv.w.data, attn_module.wv.b.data,
        attn_module.proj.w.data, attn_module.proj.b.data,
        attn_module.heads, attn_module.bias_table.data, attn_module.window)
    return res.reshape(b, h, w, c)


def mask_pair_counts(h: int, w: int, m: int) -> list[tuple[int, int]]:
    """Per window: (#cross-region pairs, #distinct regions), by brute force."""
    s = m // 2
    labels = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        for c in range(w):
            labels[r, c] = region_label(r, c, h, w, m)
    rolled = np.roll(labels, (-s, -s), axis=(0, 1))
    counts = []
    for wr in range(h // m):
        for wc in range(w // m):
            window = rolled[wr * m:(wr + 1) * m, wc * m:(wc + 1) * m].reshape(-1)
            masked = 0
            for i in range(m * m):
                for j in range(m * m):
                    if window[i] != window[j]:
                        masked += 1
            counts.append((masked, len(set(window.tolist()))))
    return counts
