"""Benchmarks: windowed-vs-global attention cost, and kernel backend timing."""
from __future__ import annotations

import time
from fractions import Fraction

import numpy as np

from . import kernels, macs
from .autodiff import Tensor, no_grad
from .config import LossConfig
from .encoder import SwinBlock
from .losses import hybrid_loss
from .model import SwinTextUNet
from .text import StubTextProvider, embedding_batch


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def attention_bench(grid: int, window: int, repeat: int = 3, dim: int = 4) -> dict:
    """Instrumented MACs and wall time for windowed vs whole-grid attention."""
    x = Tensor(np.random.default_rng(0).standard_normal((1, grid, grid, dim)).astype(np.float32))

    def run(m: int) -> tuple[int, float]:
        blk = SwinBlock(dim=dim, heads=1, grid=grid, window=m, shifted=False,
                        mlp_ratio=1.0, rng=np.random.default_rng(1), dtype=np.float32)
        meter = macs.MacMeter()
        with no_grad(), meter:
            blk.attend(x)
        t = _median_time(lambda: blk.attend(x), repeat)
        return meter.scopes.get("attn_matmul", 0), t

    with no_grad():
        macs_win, t_win = run(window)
        macs_glob, t_glob = run(grid)
    ratio = Fraction(macs_win, macs_glob)
    return {
        "grid": grid,
        "window": window,
        "tokens": grid * grid,
        "macs_windowed": macs_win,
        "macs_global": macs_glob,
        "ratio": ratio,
        "expected_ratio": Fraction(window * window, grid * grid),
        "time_windowed_s": t_win,
        "time_global_s": t_glob,
    }


def attention_bench_csv(rows: list[dict]) -> str:
    header = ("grid,window,tokens,macs_windowed,macs_global,ratio,expected_ratio,"
              "time_windowed_s,time_global_s")
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['grid']},{r['window']},{r['tokens']},{r['macs_windowed']},"
            f"{r['macs_global']},{r['ratio']},{r['expected_ratio']},"
            f"{r['time_windowed_s']!r},{r['time_global_s']!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# kernel backend comparison
# ---------------------------------------------------------------------------

def _kernel_cases(dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 32, 16, 16)).astype(dtype)
    w = (rng.standard_normal((32, 32, 3, 3)) * 0.1).astype(dtype)
    b = np.zeros(32, dtype=dtype)
    gy = rng.standard_normal(x.shape).astype(dtype)
    flat = rng.standard_normal((512, 1024)).astype(dtype)
    gamma = np.ones(1024, dtype=dtype)
    beta = np.zeros(1024, dtype=dtype)
    return {
        "conv3x3_fwd": lambda impl: impl.conv2d_forward(x, w, b, 1),
        "conv3x3_bwd": lambda impl: impl.conv2d_backward(x, w, gy, 1),
        "gelu_fwd": lambda impl: impl.gelu_forward(flat),
        "gelu_bwd": lambda impl: impl.gelu_backward(flat, flat),
        "layernorm_fwd": lambda impl: impl.layernorm_forward(flat, gamma, beta, 1e-5),
    }


def kernel_bench(repeat: int = 5, dtype=np.float32) -> list[dict]:
    """Per-kernel median wall time for every importable backend."""
    rows = []
    for backend in kernels.available_backends():
        impl = kernels.get_backend(backend)
        for name, fn in _kernel_cases(dtype).items():
            fn(impl)  # warmup
            rows.append({
                "backend": backend,
                "kernel": name,
                "time_s": _median_time(lambda: fn(impl), repeat),
            })
    return rows


def model_step_bench(repeat: int = 3) -> list[dict]:
    """Full forward+backward step on the toy config, per kernel backend.

    Backend selection is import-time, so this re-runs with `kernels.impl`
    temporarily swapped; only meaningful when both backends are importable.
    """
    from .verify import TOY64_CONFIG
    from .autodiff import backward

    rows = []
    saved = {name: getattr(kernels, name) for name in
             ("conv2d_forward", "conv2d_backward", "gelu_forward", "gelu_backward",
              "layernorm_forward", "layernorm_backward")}
    try:
        for backend in kernels.available_backends():
            impl = kernels.get_backend(backend)
            for name in saved:
                setattr(kernels, name, getattr(impl, name))
            model = SwinTextUNet(TOY64_CONFIG, dtype=np.float32, seed=0)
            provider = StubTextProvider(TOY64_CONFIG.text_dim)
            x = Tensor(np.random.default_rng(1).random((4, 3, 64, 64)).astype(np.float32))
            y = Tensor((np.random.default_rng(2).random((4, 1, 64, 64)) > 0.7).astype(np.float32))
            text = embedding_batch(provider, ["one infected area, upper left lung"] * 4, np.float32)

            def step():
                model.zero_grad()
                _, prob = model(x, text)
                backward(hybrid_loss(prob, y, LossConfig()))

            step()  # warmup
            rows.append({"backend": backend, "kernel": "toy_train_step_batch4",
                         "time_s": _median_time(step, repeat)})
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)
    return rows


def kernel_bench_csv(rows: list[dict]) -> str:
    lines = ["backend,kernel,time_s"]
    for r in rows:
        lines.append(f"{r['backend']},{r['kernel']},{r['time_s']!r}")
    return "\n".join(lines) + "\n"
