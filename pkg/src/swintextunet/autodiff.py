"""Dense N-D tensors with tape-based reverse-mode automatic differentiation.

Design notes:

* Define-by-run: every differentiable op appends one record to a global tape;
  ``backward`` walks the tape once in reverse and clears it. One training step
  owns the tape (single logical thread).
* Two precision modes. Verification suites build models in float64 so
  finite-difference tolerances are meaningful; training uses float32. An op's
  output dtype always equals its input dtype.
* Tensors are immutable after construction except for gradient accumulation
  (and optimizer writes to leaf ``data`` between steps, when the tape is
  empty).
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np

from . import kernels, macs
from .errors import ConfigError, ShapeError, UsageError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class Tape:
    """Ordered record of executed ops; inputs always precede their consumers."""

    def __init__(self) -> None:
        self._records: list[tuple["Tensor", tuple["Tensor", ...], object]] = []
        self.enabled = True

    def record(self, output: "Tensor", inputs: tuple["Tensor", ...], backward_fn) -> None:
        self._records.append((output, inputs, backward_fn))

    def clear(self) -> None:
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)


_TAPE = Tape()


def tape() -> Tape:
    return _TAPE


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


class Tensor:
    """N-dimensional array with optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(dtype if dtype is not None else DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------------
    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def as_tensor(value, like: Tensor) -> Tensor:
    """Wrap a scalar or array as a constant tensor matching `like`'s dtype."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, b)
    if a.data.dtype != b.data.dtype:
        raise UsageError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")
    return a, b


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _TAPE.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * np.asarray(s, dtype=a.data.dtype), (a,), lambda g: (g * s,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    batch = int(np.prod(data.shape[:-2], dtype=np.int64)) if data.ndim > 2 else 1
    macs.record_macs(batch * data.shape[-2] * a.shape[-1] * data.shape[-1])

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(data, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# layout ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(data, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} is not a permutation for shape {a.shape}")
    inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    return _make(data, (a,), lambda g: (np.transpose(g, inverse),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _make(data, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat of an empty sequence")
    dtype = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dtype:
            raise UsageError("concat: mixed dtypes")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}"
        ) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _make(data, tuple(tensors), backward_fn)


def roll(a: Tensor, shifts: tuple[int, ...], axes: tuple[int, ...]) -> Tensor:
    data = np.roll(a.data, shifts, axis=axes)
    neg_shifts = tuple(-s for s in shifts)
    return _make(data, (a,), lambda g: (np.roll(g, neg_shifts, axis=axes),))


def index_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; backward scatter-adds into the table."""
    if table.ndim != 2:
        raise ShapeError(f"index_rows: table must be 2-D, got {table.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    data = table.data[idx]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(data, (table,), backward_fn)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(data, (a,), backward_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[ax] for ax in axis]))

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return _make(data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax; the per-slice max is subtracted before exponentiation.

    -inf logits (attention masks) map to exactly zero weight. A slice that is
    entirely -inf is undefined and not supported.
    """
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / denom

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    return _make(data, (a,), lambda g: (g * (a.data > 0),))


def gelu(a: Tensor) -> Tensor:
    data = kernels.gelu_forward(a.data)
    return _make(data, (a,), lambda g: (kernels.gelu_backward(a.data, g),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(data, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, optional per-channel affine."""
    if eps <= 0:
        raise ConfigError("layer_norm requires eps > 0")
    if (gamma is None) != (beta is None):
        raise UsageError("layer_norm: gamma and beta must be given together")
    c = x.shape[-1]
    if gamma is not None and (gamma.shape != (c,) or beta.shape != (c,)):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match C={c}")
    x2 = np.ascontiguousarray(x.data.reshape(-1, c))
    g_arr = gamma.data if gamma is not None else None
    b_arr = beta.data if beta is not None else None
    y2, mu, rstd = kernels.layernorm_forward(x2, g_arr, b_arr, eps)

    if gamma is None:
        def backward_fn(g):
            gx, _, _ = kernels.layernorm_backward(x2, None, mu, rstd, g.reshape(-1, c))
            return (gx.reshape(x.shape),)

        return _make(y2.reshape(x.shape), (x,), backward_fn)

    def backward_fn(g):
        gx, ggamma, gbeta = kernels.layernorm_backward(x2, g_arr, mu, rstd, g.reshape(-1, c))
        return gx.reshape(x.shape), ggamma, gbeta

    return _make(y2.reshape(x.shape), (x, gamma, beta), backward_fn)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, num_groups: int,
               eps: float = 1e-5) -> Tensor:
    """Normalize (B,C,H,W) per sample over channel groups, then per-channel affine."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm expects (B,C,H,W), got {x.shape}")
    b, c, h, w = x.shape
    if c % num_groups != 0:
        raise ConfigError(f"group_norm: {num_groups} groups do not divide C={c}")
    x2 = np.ascontiguousarray(x.data.reshape(b * num_groups, -1))
    xhat2, mu, rstd = kernels.layernorm_forward(x2, None, None, eps)
    xhat = xhat2.reshape(b, c, h, w)
    y = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward_fn(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gyh = (g * gamma.data[None, :, None, None]).reshape(b * num_groups, -1)
        gx2, _, _ = kernels.layernorm_backward(x2, None, mu, rstd, np.ascontiguousarray(gyh))
        return gx2.reshape(x.shape), ggamma, gbeta

    return _make(y, (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------

_SUPPORTED_CONV = {(1, 0), (3, 1)}


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: Optional[int] = None) -> Tensor:
    """Cross-correlation with 1x1 (pad 0) or 3x3 (pad 1) kernels; spatial dims preserved."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/weight, got {x.shape} and {w.shape}")
    cout, cin, kh, kw = w.shape
    if kh != kw:
        raise ConfigError(f"conv2d: non-square kernel {kh}x{kw} not supported")
    if padding is None:
        padding = (kh - 1) // 2
    if (kh, padding) not in _SUPPORTED_CONV:
        raise ConfigError(f"conv2d: unsupported kernel/padding combination {kh}x{kw}/pad={padding}")
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != weight channels {cin}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")

    data = kernels.conv2d_forward(x.data, w.data, b.data, padding)
    bsz, _, h, wd = x.shape
    macs.record_macs(bsz * h * wd * cout * cin * kh * kw)

    def backward_fn(g):
        gx, gw, gb = kernels.conv2d_backward(x.data, w.data, np.ascontiguousarray(g), padding)
        return gx, gw, gb

    return _make(data, (x, w, b), backward_fn)


_INTERP_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _interp_matrix_2x(n: int, dtype) -> np.ndarray:
    """(2n, n) bilinear x2 interpolation matrix, half-pixel-center convention."""
    key = (n, np.dtype(dtype).str)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((2 * n, n), dtype=np.float64)
    for i in range(2 * n):
        src = 0.5 * i - 0.25
        i0f = math.floor(src)
        frac = src - i0f
        i0 = min(max(i0f, 0), n - 1)
        i1 = min(max(i0f + 1, 0), n - 1)
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    out = m.astype(dtype)
    _INTERP_CACHE[key] = out
    return out


def upsample_bilinear_2x(x: Tensor) -> Tensor:
    """Bilinear x2 upsample of (B,C,H,W), expressed as two constant matmuls."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear_2x expects (B,C,H,W), got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    wr = Tensor(_interp_matrix_2x(h, x.data.dtype))
    wc = Tensor(_interp_matrix_2x(w, x.data.dtype).T.copy())
    return matmul(matmul(wr, x), wc)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every requires_grad tensor, then clear the tape."""
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    try:
        loss.accumulate_grad(np.ones_like(loss.data))
        for output, inputs, backward_fn in reversed(_TAPE._records):
            g = output.grad
            if g is None:
                continue
            grads = backward_fn(g)
            for tin, gin in zip(inputs, grads):
                if gin is None or not tin.requires_grad:
                    continue
                if gin.dtype != tin.data.dtype:
                    gin = gin.astype(tin.data.dtype)
                tin.accumulate_grad(gin)
    finally:
        _TAPE.clear()
