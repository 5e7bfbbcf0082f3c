"""Central finite-difference gradient oracle.

The oracle only ever evaluates the forward pass; analytic gradients from the
tape are compared against symmetric difference quotients. Relative error uses
a unit floor so tiny gradients degrade to an absolute tolerance.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, backward, no_grad


def finite_difference_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                           elements: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of scalar f with respect to t, elementwise.

    `elements` restricts the probe to a flat-index subset (entries not probed
    are returned as NaN so callers can mask them).
    """
    flat = t.data.reshape(-1)
    if elements is None:
        elements = range(flat.size)
        out = np.empty(flat.size, dtype=np.float64)
    else:
        out = np.full(flat.size, np.nan)
    with no_grad():
        for i in elements:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data.reshape(()))
            flat[i] = orig - h
            fm = float(f().data.reshape(()))
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(t.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(1, |a_i|, |n_i|), NaN probes excluded."""
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    a = analytic[mask].astype(np.float64)
    n = numeric[mask]
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(f: Callable[[], Tensor], wrt: Sequence[Tensor], h: float = 1e-5,
              tol: float = 1e-4, max_elements: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> float:
    """Compare tape gradients of scalar f against central differences.

    Returns the worst relative error over all checked tensors; raises
    AssertionError if it exceeds `tol`. `max_elements` caps the number of
    probed elements per tensor (chosen by `rng` when sampling is needed).
    """
    for t in wrt:
        t.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if max_elements is not None and t.size > max_elements:
            if rng is None:
                rng = np.random.default_rng(0)
            elements = rng.choice(t.size, size=max_elements, replace=False)
        else:
            elements = None
        numeric = finite_difference_grad(f, t, h=h, elements=elements)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(
                f"gradient check failed for {t.name or 'tensor'}{t.shape}: rel err {err:.3e} > {tol:.1e}"
            )
    return worst
