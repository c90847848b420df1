# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels.

Loop orders match ``_pykernels`` term for term; build with
``-ffp-contract=off`` so no multiply-add gets fused and the two backends stay
bitwise identical.
"""
import numpy as np

BACKEND = "cython"


cdef inline void _xrange(Py_ssize_t kj, Py_ssize_t pad, Py_ssize_t stride, Py_ssize_t w,
                         Py_ssize_t wo, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns xx in [lo, hi) map to input columns inside [0, w)
    cdef Py_ssize_t off = kj - pad
    cdef Py_ssize_t a = 0, b = wo
    if off < 0:
        a = (-off + stride - 1) // stride
    if (wo - 1) * stride + off >= w:
        b = (w - 1 - off) // stride + 1 if w - 1 - off >= 0 else 0
    if b < a:
        b = a
    lo[0] = a
    hi[0] = b


def im2col(const double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t p = ho * wo
    out = np.empty((c * k * k, n * p))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, y, xx, row, iy, base, lo, hi, off
    cdef double* dst
    cdef const double* src
    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    _xrange(kj, pad, stride, w, wo, &lo, &hi)
                    off = kj - pad
                    for b in range(n):
                        for y in range(ho):
                            iy = y * stride + ki - pad
                            dst = &o[row, b * p + y * wo]
                            if iy < 0 or iy >= h:
                                for xx in range(wo):
                                    dst[xx] = 0.0
                                continue
                            src = &x[b, ch, iy, 0]
                            for xx in range(lo):
                                dst[xx] = 0.0
                            if stride == 1:
                                for xx in range(lo, hi):
                                    dst[xx] = src[xx + off]
                            else:
                                for xx in range(lo, hi):
                                    dst[xx] = src[xx * stride + off]
                            for xx in range(hi, wo):
                                dst[xx] = 0.0
    return out


def col2im(const double[:, ::1] cols, shape, int k, int stride, int pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t p = ho * wo
    out = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, y, xx, row, iy, lo, hi, off
    cdef double* dst
    cdef const double* src
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        _xrange(kj, pad, stride, w, wo, &lo, &hi)
                        off = kj - pad
                        for y in range(ho):
                            iy = y * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            dst = &o[b, ch, iy, 0]
                            src = &cols[row, b * p + y * wo]
                            if stride == 1:
                                for xx in range(lo, hi):
                                    dst[xx + off] += src[xx]
                            else:
                                for xx in range(lo, hi):
                                    dst[xx * stride + off] += src[xx]
    return out


def sep_filter_valid(const double[:, :, ::1] x, const double[::1] taps):
    cdef Py_ssize_t kk = taps.shape[0]
    cdef Py_ssize_t m = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ho = h - kk + 1, wo = w - kk + 1
    tmp_arr = np.empty((m, h, wo))
    out = np.empty((m, ho, wo))
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, y, xx, j
    cdef double acc
    with nogil:
        for i in range(m):
            for y in range(h):
                for xx in range(wo):
                    acc = taps[0] * x[i, y, xx]
                    for j in range(1, kk):
                        acc = acc + taps[j] * x[i, y, xx + j]
                    tmp[i, y, xx] = acc
            for y in range(ho):
                for xx in range(wo):
                    acc = taps[0] * tmp[i, y, xx]
                    for j in range(1, kk):
                        acc = acc + taps[j] * tmp[i, y + j, xx]
                    o[i, y, xx] = acc
    return out


def sep_filter_valid_T(const double[:, :, ::1] g, const double[::1] taps, shape):
    cdef Py_ssize_t kk = taps.shape[0]
    cdef Py_ssize_t m = shape[0], h = shape[1], w = shape[2]
    cdef Py_ssize_t ho = h - kk + 1, wo = w - kk + 1
    tmp_arr = np.empty((m, h, wo))
    out = np.empty((m, h, w))
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, y, xx, j, lo, hi
    cdef double acc
    with nogil:
        for i in range(m):
            for y in range(h):
                lo = y - ho + 1 if y - ho + 1 > 0 else 0
                hi = y if y < kk - 1 else kk - 1
                for xx in range(wo):
                    acc = 0.0
                    for j in range(lo, hi + 1):
                        acc = acc + taps[j] * g[i, y - j, xx]
                    tmp[i, y, xx] = acc
            for y in range(h):
                for xx in range(w):
                    lo = xx - wo + 1 if xx - wo + 1 > 0 else 0
                    hi = xx if xx < kk - 1 else kk - 1
                    acc = 0.0
                    for j in range(lo, hi + 1):
                        acc = acc + taps[j] * tmp[i, y, xx - j]
                    o[i, y, xx] = acc
    return out


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    # half-sample symmetric extension, period 2n
    cdef Py_ssize_t p = 2 * n
    i = i % p
    if i < 0:
        i += p
    if i >= n:
        i = p - 1 - i
    return i


def min_filter(const double[:, :, ::1] x, int size):
    cdef Py_ssize_t m = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t r = size // 2
    rows_arr = np.empty((m, h, w))
    out = np.empty((m, h, w))
    cdef double[:, :, ::1] rows = rows_arr
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, y, xx, d
    cdef double best, v
    with nogil:
        for i in range(m):
            for y in range(h):
                for xx in range(w):
                    best = x[i, y, _reflect(xx - r, w)]
                    for d in range(-r + 1, r + 1):
                        v = x[i, y, _reflect(xx + d, w)]
                        if v < best:
                            best = v
                    rows[i, y, xx] = best
            for y in range(h):
                for xx in range(w):
                    best = rows[i, _reflect(y - r, h), xx]
                    for d in range(-r + 1, r + 1):
                        v = rows[i, _reflect(y + d, h), xx]
                        if v < best:
                            best = v
                    o[i, y, xx] = best
    return out
