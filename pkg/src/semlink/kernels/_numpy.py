"""Pure-numpy implementations of the hot kernels.

Signature-for-signature interchangeable with the compiled module
``semlink.kernels._fastcore``; results may differ from it in the last few
ulps because reduction orders differ (BLAS / einsum vs explicit loops).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of a (C,H,W) image with (F,C,KH,KW) filters."""
    windows = sliding_window_view(x, (k.shape[2], k.shape[3]), axis=(1, 2))
    return np.einsum("fcij,cabij->fab", k, windows, optimize=True)


def conv2d_valid_vjp(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Input cotangent of conv2d_valid: full correlation with flipped filters."""
    kh, kw = k.shape[2], k.shape[3]
    gpad = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    kflip = k[:, :, ::-1, ::-1]
    windows = sliding_window_view(gpad, (kh, kw), axis=(1, 2))
    return np.einsum("fcij,fabij->cab", kflip, windows, optimize=True)


def avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2; trailing odd row/column dropped."""
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2)
    return v.mean(axis=(2, 4))


def avgpool2_vjp(g: np.ndarray, in_shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = in_shape
    h2, w2 = g.shape[1], g.shape[2]
    gx = np.zeros(in_shape)
    gx[:, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0
    return gx


def dense2_forward(y, w1, b1, w2, b2):
    """Two-layer map w2 @ tanh(w1 @ y + b1) + b2; returns (out, hidden)."""
    hidden = np.tanh(w1 @ y + b1)
    return w2 @ hidden + b2, hidden


def dense2_vjp(cot, hidden, w1, w2):
    """Input cotangent of dense2_forward given the stored hidden activations."""
    return w1.T @ ((w2.T @ cot) * (1.0 - hidden * hidden))
