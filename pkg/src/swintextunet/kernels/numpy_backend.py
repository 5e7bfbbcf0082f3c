"""Pure-numpy implementations of the hot kernels.

Same call signatures as the compiled backend; the convolution path uses an
im2col view plus a BLAS matmul, the scatter in the backward pass is unrolled
into kh*kw slice additions.
"""
from __future__ import annotations

import numpy as np

GELU_C0 = 0.7978845608  # tanh-approximation constants, fixed for reproducibility
GELU_C1 = 0.044715

name = "numpy"


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B,C,Hp,Wp) padded input -> (B,Ho,Wo,C*kh*kw) patch matrix."""
    b, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (b, ho, wo, c, kh, kw), (sb, sh, sw, sc, sh, sw), writeable=False
    )
    return view.reshape(b, ho, wo, c * kh * kw)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw)
    y = cols @ w.reshape(cout, -1).T
    y += b
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray, pad: int):
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw)
    gyt = np.ascontiguousarray(gy.transpose(0, 2, 3, 1))

    gw = np.tensordot(gyt, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
    gb = gy.sum(axis=(0, 2, 3))

    gcols = (gyt @ w.reshape(cout, -1)).reshape(bsz, ho, wo, cin, kh, kw)
    gxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            gxp[:, :, ki:ki + ho, kj:kj + wo] += gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb


def gelu_forward(x: np.ndarray) -> np.ndarray:
    inner = GELU_C0 * (x + GELU_C1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    x2 = x * x
    inner = GELU_C0 * (x + GELU_C1 * x * x2)
    t = np.tanh(inner)
    dinner = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x2)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def layernorm_forward(x2: np.ndarray, gamma, beta, eps: float):
    """Normalize rows of (R, C). gamma/beta are length-C or None."""
    mu = x2.mean(axis=1)
    xc = x2 - mu[:, None]
    var = np.mean(xc * xc, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd[:, None]
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y, mu, rstd


def layernorm_backward(x2: np.ndarray, gamma, mu: np.ndarray, rstd: np.ndarray, gy: np.ndarray):
    xhat = (x2 - mu[:, None]) * rstd[:, None]
    if gamma is not None:
        ggamma = (gy * xhat).sum(axis=0)
        gbeta = gy.sum(axis=0)
        gyh = gy * gamma
    else:
        ggamma = gbeta = None
        gyh = gy
    m1 = gyh.mean(axis=1, keepdims=True)
    m2 = (gyh * xhat).mean(axis=1, keepdims=True)
    gx = (gyh - m1 - xhat * m2) * rstd[:, None]
    return gx, ggamma, gbeta
