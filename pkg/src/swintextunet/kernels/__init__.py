"""Kernel backend selection.

Two interchangeable implementations exist: the vectorized numpy one (im2col +
BLAS for convolution) and a compiled Cython one (direct loops). `swintext
bench --kernels` times both; on the measured configs the BLAS-backed numpy
path wins the convolutions, which dominate a training step, so `auto` resolves
to numpy. Set `SWINTEXT_KERNELS=cython` to run on the compiled core (same
signatures, agrees to float rounding).
"""
from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("SWINTEXT_KERNELS", "auto").lower()

if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"SWINTEXT_KERNELS must be auto|cython|numpy, got {_requested!r}")

impl = numpy_backend
if _requested == "cython":
    from . import _ckernels  # type: ignore[attr-defined]

    impl = _ckernels

conv2d_forward = impl.conv2d_forward
conv2d_backward = impl.conv2d_backward
gelu_forward = impl.gelu_forward
gelu_backward = impl.gelu_backward
layernorm_forward = impl.layernorm_forward
layernorm_backward = impl.layernorm_backward

GELU_C0 = numpy_backend.GELU_C0
GELU_C1 = numpy_backend.GELU_C1


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return impl.name


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Fetch a backend module by name (for parity tests and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
