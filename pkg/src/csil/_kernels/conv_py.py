"""Numpy fallback for the convolution / max-pool kernels.

Same contracts as the compiled extension: float64 C-contiguous arrays,
stride-1 valid convolution, non-overlapping pooling windows (trailing rows
and columns that do not fill a window are dropped).
"""

import numpy as np


def conv2d_forward(x, w):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    y = np.zeros((n, cout, ho, wo))
    for a in range(kh):
        for b in range(kw):
            xs = x[:, :, a:a + ho, b:b + wo]
            # (N,Cin,Ho,Wo) x (Cout,Cin) summed over Cin
            y += np.tensordot(xs, w[:, :, a, b], axes=([1], [1])).transpose(0, 3, 1, 2)
    return y


def conv2d_backward(x, w, gy):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for a in range(kh):
        for b in range(kw):
            xs = x[:, :, a:a + ho, b:b + wo]
            gw[:, :, a, b] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
            gx[:, :, a:a + ho, b:b + wo] += np.tensordot(
                gy, w[:, :, a, b], axes=([1], [0])
            ).transpose(0, 3, 1, 2)
    return gx, gw


def maxpool2d_forward(x, k):
    n, c, h, wd = x.shape
    ho, wo = h // k, wd // k
    xc = x[:, :, :ho * k, :wo * k]
    windows = xc.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    rel = np.argmax(windows, axis=-1)
    y = np.take_along_axis(windows, rel[..., None], axis=-1)[..., 0]
    # window-relative (a*k+b) -> absolute flat index into the (H, W) plane
    rows = (np.arange(ho)[:, None] * k)[None, None] + rel // k
    cols = (np.arange(wo)[None, :] * k)[None, None] + rel % k
    idx = (rows * wd + cols).astype(np.int64)
    return y, idx


def maxpool2d_backward(gy, idx, x_shape):
    n, c, h, wd = x_shape
    gx = np.zeros((n, c, h * wd))
    nn = np.arange(n)[:, None, None]
    cc = np.arange(c)[None, :, None]
    np.add.at(gx, (nn, cc, idx.reshape(n, c, -1)), gy.reshape(n, c, -1))
    return gx.reshape(n, c, h, wd)
