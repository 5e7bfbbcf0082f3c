# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels (conv2d, GELU, LayerNorm).

Loop nests are ordered so the innermost index walks contiguous memory; the
padding cases (0 for 1x1, 1 for 3x3) are handled with bounds checks instead
of materializing a padded copy.
"""
import numpy as np

cimport cython
from libc.math cimport sqrt, tanh

ctypedef fused real:
    float
    double

name = "cython"

DEF GELU_C0 = 0.7978845608
DEF GELU_C1 = 0.044715


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

cdef void _conv_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b,
                    int pad, real[:, :, :, ::1] y) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t bi, co, ci, ki, kj, i, j, ii, jj, j0, j1
    cdef real wv
    for bi in range(B):
        for co in range(Co):
            for i in range(H):
                for j in range(W):
                    y[bi, co, i, j] = b[co]
            for ci in range(Ci):
                for ki in range(kh):
                    for kj in range(kw):
                        wv = w[co, ci, ki, kj]
                        for i in range(H):
                            ii = i + ki - pad
                            if ii < 0 or ii >= H:
                                continue
                            j0 = pad - kj if kj < pad else 0
                            j1 = W - kj + pad if kj > pad else W
                            for j in range(j0, j1):
                                y[bi, co, i, j] = y[bi, co, i, j] + wv * x[bi, ci, ii, j + kj - pad]


cdef void _conv_bwd(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[:, :, :, ::1] gy,
                    int pad, real[:, :, :, ::1] gx, real[:, :, :, ::1] gw,
                    real[::1] gb) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t bi, co, ci, ki, kj, i, j, ii, j0, j1
    cdef real wv, acc, g
    for bi in range(B):
        for co in range(Co):
            acc = 0
            for i in range(H):
                for j in range(W):
                    acc = acc + gy[bi, co, i, j]
            gb[co] = gb[co] + acc
            for ci in range(Ci):
                for ki in range(kh):
                    for kj in range(kw):
                        wv = w[co, ci, ki, kj]
                        acc = 0
                        for i in range(H):
                            ii = i + ki - pad
                            if ii < 0 or ii >= H:
                                continue
                            j0 = pad - kj if kj < pad else 0
                            j1 = W - kj + pad if kj > pad else W
                            for j in range(j0, j1):
                                g = gy[bi, co, i, j]
                                acc = acc + g * x[bi, ci, ii, j + kj - pad]
                                gx[bi, ci, ii, j + kj - pad] = gx[bi, ci, ii, j + kj - pad] + g * wv
                        gw[co, ci, ki, kj] = gw[co, ci, ki, kj] + acc


def conv2d_forward(x, w, b, int pad):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    b = np.ascontiguousarray(b)
    y = np.empty((x.shape[0], w.shape[0], x.shape[2], x.shape[3]), dtype=x.dtype)
    if x.dtype == np.float64:
        _conv_fwd[double](x, w, b, pad, y)
    else:
        _conv_fwd[float](x, w, b, pad, y)
    return y


def conv2d_backward(x, w, gy, int pad):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    gy = np.ascontiguousarray(gy)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[0], dtype=x.dtype)
    if x.dtype == np.float64:
        _conv_bwd[double](x, w, gy, pad, gx, gw, gb)
    else:
        _conv_bwd[float](x, w, gy, pad, gx, gw, gb)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# GELU (tanh approximation)
# ---------------------------------------------------------------------------

cdef void _gelu_fwd(real[::1] x, real[::1] y) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, inner
    for i in range(n):
        v = x[i]
        inner = GELU_C0 * (v + GELU_C1 * v * v * v)
        y[i] = <real>(0.5 * v * (1.0 + tanh(inner)))


cdef void _gelu_bwd(real[::1] x, real[::1] gy, real[::1] gx) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, v2, t, dinner
    for i in range(n):
        v = x[i]
        v2 = v * v
        t = tanh(GELU_C0 * (v + GELU_C1 * v * v2))
        dinner = GELU_C0 * (1.0 + 3.0 * GELU_C1 * v2)
        gx[i] = <real>(gy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner))


def gelu_forward(x):
    flat = np.ascontiguousarray(x).reshape(-1)
    y = np.empty_like(flat)
    if flat.dtype == np.float64:
        _gelu_fwd[double](flat, y)
    else:
        _gelu_fwd[float](flat, y)
    return y.reshape(x.shape)


def gelu_backward(x, gy):
    flat = np.ascontiguousarray(x).reshape(-1)
    gflat = np.ascontiguousarray(gy).reshape(-1)
    gx = np.empty_like(flat)
    if flat.dtype == np.float64:
        _gelu_bwd[double](flat, gflat, gx)
    else:
        _gelu_bwd[float](flat, gflat, gx)
    return gx.reshape(x.shape)


# ---------------------------------------------------------------------------
# LayerNorm over rows of a (R, C) matrix
# ---------------------------------------------------------------------------

cdef void _ln_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, int affine,
                  double eps, real[:, ::1] y, real[::1] mu, real[::1] rstd) noexcept nogil:
    cdef Py_ssize_t r, c, R = x.shape[0], C = x.shape[1]
    cdef double m, v, d, rs
    for r in range(R):
        m = 0
        for c in range(C):
            m += x[r, c]
        m /= C
        v = 0
        for c in range(C):
            d = x[r, c] - m
            v += d * d
        v /= C
        rs = 1.0 / sqrt(v + eps)
        mu[r] = <real>m
        rstd[r] = <real>rs
        if affine:
            for c in range(C):
                y[r, c] = <real>(((x[r, c] - m) * rs) * gamma[c] + beta[c])
        else:
            for c in range(C):
                y[r, c] = <real>((x[r, c] - m) * rs)


cdef void _ln_bwd(real[:, ::1] x, real[::1] gamma, int affine, real[::1] mu,
                  real[::1] rstd, real[:, ::1] gy, real[:, ::1] gx,
                  real[::1] ggamma, real[::1] gbeta) noexcept nogil:
    cdef Py_ssize_t r, c, R = x.shape[0], C = x.shape[1]
    cdef double m1, m2, xh, g
    for r in range(R):
        m1 = 0
        m2 = 0
        for c in range(C):
            xh = (x[r, c] - mu[r]) * rstd[r]
            g = gy[r, c]
            if affine:
                ggamma[c] = ggamma[c] + <real>(g * xh)
                gbeta[c] = gbeta[c] + <real>g
                g = g * gamma[c]
            m1 += g
            m2 += g * xh
        m1 /= C
        m2 /= C
        for c in range(C):
            xh = (x[r, c] - mu[r]) * rstd[r]
            g = gy[r, c]
            if affine:
                g = g * gamma[c]
            gx[r, c] = <real>((g - m1 - xh * m2) * rstd[r])


def layernorm_forward(x2, gamma, beta, double eps):
    x2 = np.ascontiguousarray(x2)
    y = np.empty_like(x2)
    mu = np.empty(x2.shape[0], dtype=x2.dtype)
    rstd = np.empty(x2.shape[0], dtype=x2.dtype)
    affine = gamma is not None
    g = np.ascontiguousarray(gamma) if affine else np.empty(0, dtype=x2.dtype)
    bt = np.ascontiguousarray(beta) if affine else np.empty(0, dtype=x2.dtype)
    if x2.dtype == np.float64:
        _ln_fwd[double](x2, g, bt, affine, eps, y, mu, rstd)
    else:
        _ln_fwd[float](x2, g, bt, affine, eps, y, mu, rstd)
    return y, mu, rstd


def layernorm_backward(x2, gamma, mu, rstd, gy):
    x2 = np.ascontiguousarray(x2)
    gy = np.ascontiguousarray(gy)
    gx = np.empty_like(x2)
    affine = gamma is not None
    g = np.ascontiguousarray(gamma) if affine else np.empty(0, dtype=x2.dtype)
    ggamma = np.zeros(x2.shape[1], dtype=x2.dtype) if affine else None
    gbeta = np.zeros(x2.shape[1], dtype=x2.dtype) if affine else None
    gg = ggamma if affine else np.empty(0, dtype=x2.dtype)
    gb = gbeta if affine else np.empty(0, dtype=x2.dtype)
    if x2.dtype == np.float64:
        _ln_bwd[double](x2, g, affine, mu, rstd, gy, gx, gg, gb)
    else:
        _ln_bwd[float](x2, g, affine, mu, rstd, gy, gx, gg, gb)
    return gx, ggamma, gbeta
