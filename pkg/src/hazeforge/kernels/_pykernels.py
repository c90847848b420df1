"""Pure-numpy reference versions of the hot kernels.

Each function mirrors the loop order of its compiled twin in ``_ckernels.pyx``
so that both backends produce bitwise-identical results.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def im2col(x, k, stride, pad):
    """Unfold ``x[N, C, H, W]`` into ``cols[C*k*k, N*Ho*Wo]`` (zero padding)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # [N, C, Ho, Wo, k, k] -> [C, k, k, N, Ho, Wo]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``shape``."""
    n, c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    d = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((c, n, h + 2 * pad, w + 2 * pad))
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + hspan : stride, kj : kj + wspan : stride] += d[:, ki, kj]
    return np.ascontiguousarray(out[:, :, pad : pad + h, pad : pad + w].transpose(1, 0, 2, 3))


def sep_filter_valid(x, taps):
    """Separable 'valid' correlation of ``x[M, H, W]`` with ``outer(taps, taps)``.

    Rows are filtered first, then columns.
    """
    kk = taps.shape[0]
    m, h, w = x.shape
    ho, wo = h - kk + 1, w - kk + 1
    tmp = taps[0] * x[:, :, 0:wo]
    for j in range(1, kk):
        tmp += taps[j] * x[:, :, j : j + wo]
    out = taps[0] * tmp[:, 0:ho, :]
    for j in range(1, kk):
        out += taps[j] * tmp[:, j : j + ho, :]
    return out


def sep_filter_valid_T(g, taps, shape):
    """Adjoint of :func:`sep_filter_valid` (columns first, then rows)."""
    kk = taps.shape[0]
    m, h, w = shape
    ho, wo = h - kk + 1, w - kk + 1
    tmp = np.zeros((m, h, wo))
    for j in range(kk):
        tmp[:, j : j + ho, :] += taps[j] * g
    out = np.zeros((m, h, w))
    for j in range(kk):
        out[:, :, j : j + wo] += taps[j] * tmp
    return out


def min_filter(x, size):
    """Square min filter over the last two axes of ``x[M, H, W]``, symmetric borders."""
    r = size // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r)), mode="symmetric")
    rows = sliding_window_view(xp, size, axis=2).min(axis=-1)
    return np.ascontiguousarray(sliding_window_view(rows, size, axis=1).min(axis=-1))
