import numpy as np
import pytest

from swintextunet import kernels

HAS_CYTHON = "cython" in kernels.available_backends()

needs_cython = pytest.mark.skipif(not HAS_CYTHON, reason="compiled kernels not built")


@needs_cython
class TestBackendParity:
    """Both backends must agree to float rounding on identical inputs."""

    def _backends(self):
        return kernels.get_backend("numpy"), kernels.get_backend("cython")

    @pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-4)])
    def test_conv2d_forward_backward(self, dtype, tol):
        npb, cyb = self._backends()
        rng = np.random.default_rng(0)
        for k, pad in ((3, 1), (1, 0)):
            x = rng.standard_normal((2, 3, 6, 6)).astype(dtype)
            w = (rng.standard_normal((4, 3, k, k)) * 0.3).astype(dtype)
            b = rng.standard_normal(4).astype(dtype)
            ya = npb.conv2d_forward(x, w, b, pad)
            yb = cyb.conv2d_forward(x, w, b, pad)
            assert np.abs(ya - yb).max() <= tol
            gy = rng.standard_normal(ya.shape).astype(dtype)
            for ga, gb in zip(npb.conv2d_backward(x, w, gy, pad),
                              cyb.conv2d_backward(x, w, gy, pad)):
                assert np.abs(ga - gb).max() <= tol * 10

    @pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-14), (np.float32, 1e-6)])
    def test_gelu(self, dtype, tol):
        npb, cyb = self._backends()
        x = np.random.default_rng(1).standard_normal((64,)).astype(dtype)
        assert np.abs(npb.gelu_forward(x) - cyb.gelu_forward(x)).max() <= tol
        gy = np.ones_like(x)
        assert np.abs(npb.gelu_backward(x, gy) - cyb.gelu_backward(x, gy)).max() <= tol

    @pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-4)])
    def test_layernorm(self, dtype, tol):
        npb, cyb = self._backends()
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 32)).astype(dtype)
        gamma = (rng.standard_normal(32) * 0.2 + 1.0).astype(dtype)
        beta = rng.standard_normal(32).astype(dtype)
        ya, mua, rsa = npb.layernorm_forward(x, gamma, beta, 1e-5)
        yb, mub, rsb = cyb.layernorm_forward(x, gamma, beta, 1e-5)
        assert np.abs(ya - yb).max() <= tol
        gy = rng.standard_normal(x.shape).astype(dtype)
        ga = npb.layernorm_backward(x, gamma, mua, rsa, gy)
        gb = cyb.layernorm_backward(x, gamma, mub, rsb, gy)
        for a, b in zip(ga, gb):
            assert np.abs(a - b).max() <= tol * 10

    def test_layernorm_no_affine(self):
        npb, cyb = self._backends()
        x = np.random.default_rng(3).standard_normal((4, 16))
        ya, mua, rsa = npb.layernorm_forward(x, None, None, 1e-5)
        yb, _, _ = cyb.layernorm_forward(x, None, None, 1e-5)
        assert np.abs(ya - yb).max() <= 1e-12
        gy = np.random.default_rng(4).standard_normal(x.shape)
        gxa, ga, ba = npb.layernorm_backward(x, None, mua, rsa, gy)
        gxb, gb, bb = cyb.layernorm_backward(x, None, mua, rsa, gy)
        assert ga is None and gb is None and ba is None and bb is None
        assert np.abs(gxa - gxb).max() <= 1e-12


class TestSelection:
    def test_backend_reported(self):
        assert kernels.backend_name() in ("numpy", "cython")

    def test_numpy_always_available(self):
        assert "numpy" in kernels.available_backends()

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            kernels.get_backend("cuda")


class TestBenchmarks:
    def test_kernel_bench_rows(self):
        from swintextunet.bench import kernel_bench
        rows = kernel_bench(repeat=1)
        backends = {r["backend"] for r in rows}
        assert "numpy" in backends
        assert all(r["time_s"] >= 0 for r in rows)

    @needs_cython
    def test_model_step_bench_covers_both_backends(self):
        from swintextunet.bench import model_step_bench
        rows = model_step_bench(repeat=1)
        assert {r["backend"] for r in rows} == {"numpy", "cython"}
