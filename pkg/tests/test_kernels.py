"""Convolution/pool kernels against a brute-force oracle, both backends."""

import numpy as np
import pytest

from csil._kernels import BACKEND, conv_py

try:
    from csil._kernels import _conv_ext
except ImportError:
    _conv_ext = None

BACKENDS = [("python", conv_py)] + ([("compiled", _conv_ext)] if _conv_ext else [])


def conv_reference(x, w):
    """Direct six-loop convolution; the independent oracle."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    y = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for p in range(ho):
                for q in range(wo):
                    y[i, o, p, q] = (x[i, :, p:p + kh, q:q + kw] * w[o]).sum()
    return y


def pool_reference(x, k):
    n, c, h, wd = x.shape
    ho, wo = h // k, wd // k
    y = np.zeros((n, c, ho, wo))
    for i in range(n):
        for ch in range(c):
            for p in range(ho):
                for q in range(wo):
                    y[i, ch, p, q] = x[i, ch, p * k:(p + 1) * k, q * k:(q + 1) * k].max()
    return y


@pytest.mark.parametrize("name,impl", BACKENDS)
class TestAgainstOracle:
    def test_conv_forward(self, name, impl):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 2, 7, 6))
        w = rng.normal(size=(4, 2, 3, 3))
        assert np.allclose(impl.conv2d_forward(x, w), conv_reference(x, w),
                           rtol=1e-12, atol=1e-12)

    def test_conv_backward_matches_finite_difference(self, name, impl):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 2, 5, 5))
        w = rng.normal(size=(2, 2, 3, 3))
        gy = rng.normal(size=(2, 2, 3, 3))
        gx, gw = impl.conv2d_backward(x, w, gy)
        eps = 1e-6

        def objective(xx, ww):
            return (impl.conv2d_forward(xx, ww) * gy).sum()

        for arr, grad in ((x, gx), (w, gw)):
            flat = arr.reshape(-1)
            for i in range(0, flat.size, 7):  # sample of entries
                orig = flat[i]
                flat[i] = orig + eps
                lp = objective(x, w)
                flat[i] = orig - eps
                lm = objective(x, w)
                flat[i] = orig
                fd = (lp - lm) / (2 * eps)
                assert fd == pytest.approx(grad.reshape(-1)[i], rel=1e-5, abs=1e-8)

    def test_pool_forward(self, name, impl):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 7, 7))  # odd size exercises cropping
        y, idx = impl.maxpool2d_forward(x, 2)
        assert np.array_equal(y, pool_reference(x, 2))
        # recorded indices actually address the maxima
        n, c, ho, wo = y.shape
        flat = x.reshape(n, c, -1)
        for i in range(n):
            for ch in range(c):
                assert np.array_equal(flat[i, ch][idx[i, ch].reshape(-1)],
                                      y[i, ch].reshape(-1))

    def test_pool_backward_scatters_to_argmax(self, name, impl):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 4, 4))
        y, idx = impl.maxpool2d_forward(x, 2)
        gy = np.ones_like(y)
        gx = impl.maxpool2d_backward(gy, idx, x.shape)
        assert gx.sum() == pytest.approx(4.0)
        assert np.count_nonzero(gx) == 4
        flat = gx.reshape(-1)
        assert np.all(flat[idx.reshape(-1)] == 1.0)


@pytest.mark.skipif(_conv_ext is None, reason="compiled extension not built")
class TestBackendParity:
    def test_conv_same_results(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4, 3, 9, 9))
        w = rng.normal(size=(5, 3, 3, 3))
        assert np.allclose(conv_py.conv2d_forward(x, w), _conv_ext.conv2d_forward(x, w),
                           rtol=1e-12, atol=1e-12)
        gy = rng.normal(size=(4, 5, 7, 7))
        gx_p, gw_p = conv_py.conv2d_backward(x, w, gy)
        gx_c, gw_c = _conv_ext.conv2d_backward(x, w, gy)
        assert np.allclose(gx_p, gx_c, rtol=1e-12, atol=1e-12)
        assert np.allclose(gw_p, gw_c, rtol=1e-12, atol=1e-12)

    def test_pool_identical(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 2, 8, 8))
        y_p, i_p = conv_py.maxpool2d_forward(x, 2)
        y_c, i_c = _conv_ext.maxpool2d_forward(x, 2)
        assert np.array_equal(y_p, y_c)
        assert np.array_equal(i_p, i_c)


def test_backend_reports_something():
    assert BACKEND in ("python", "compiled")
