"""Image-shaped differentiable ops and parameter initialisation.

Image tensors are ``[C, H, W]`` or batched ``[N, C, H, W]``; every op here
accepts either layout and preserves it.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DimensionError
from .tensor import Tensor, concat, make_result


def _as_batch(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"{op}: expected [C,H,W] or [N,C,H,W], got {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding (no kernel flip)."""
    xb, squeeze = _as_batch(x, "conv2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be [C_out,C_in,k,k], got {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d: bad stride={stride} / padding={padding}")
    n, c, h, w = xb.shape
    if c != cin:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias must be ({cout},), got {bias.shape}")
    k = kh
    span_h, span_w = h + 2 * padding - k, w + 2 * padding - k
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise DimensionError(
            f"conv2d: input {h}x{w} with k={k}, stride={stride}, padding={padding} "
            "does not give an exact output size"
        )
    ho, wo = span_h // stride + 1, span_w // stride + 1

    cols = kernels.im2col(np.ascontiguousarray(xb), k, stride, padding)  # [K, N*P]
    w2 = weight.data.reshape(cout, cin * k * k)
    out2 = w2 @ cols  # [Co, N*P]
    if bias is not None:
        out2 += bias.data[:, None]
    out = np.ascontiguousarray(out2.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    if squeeze:
        out = out[0]

    def bw(g):
        gb = g.reshape(n, cout, ho * wo)
        g2 = np.ascontiguousarray(gb.transpose(1, 0, 2)).reshape(cout, n * ho * wo)
        gx = gw = gbias = None
        if x.requires_grad:
            gx = kernels.col2im(w2.T @ g2, (n, c, h, w), k, stride, padding)
            if squeeze:
                gx = gx[0]
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gbias = g2.sum(axis=1)
        return (gx, gw, gbias) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, bw)


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_channels needs at least one tensor")
    for t in tensors:
        if t.ndim not in (3, 4):
            raise DimensionError(f"concat_channels: bad rank for shape {t.shape}")
    if len(tensors) == 1:
        return tensors[0]
    return concat(tensors, axis=-3)


def avg_pool2(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 windows."""
    if x.ndim < 2:
        raise DimensionError(f"avg_pool2: need at least 2 dims, got {x.shape}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2: spatial dims must be even, got {h}x{w}")
    lead = x.shape[:-2]
    v = x.data.reshape(lead + (h // 2, 2, w // 2, 2))
    out = (v[..., 0, :, 0] + v[..., 0, :, 1] + v[..., 1, :, 0] + v[..., 1, :, 1]) * 0.25

    def bw(g):
        q = g * 0.25
        full = np.empty(lead + (h // 2, 2, w // 2, 2))
        full[..., 0, :, 0] = q
        full[..., 0, :, 1] = q
        full[..., 1, :, 0] = q
        full[..., 1, :, 1] = q
        return (full.reshape(x.shape),)

    return make_result(out, (x,), bw)


def separable_filter(x: Tensor, taps: np.ndarray) -> Tensor:
    """Per-channel 'valid' correlation with the fixed 2-D window ``outer(taps, taps)``."""
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    kk = taps.shape[0]
    if x.ndim < 2 or x.shape[-2] < kk or x.shape[-1] < kk:
        raise DimensionError(f"separable_filter: input {x.shape} smaller than window {kk}")
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    flat = np.ascontiguousarray(x.data.reshape((-1, h, w)))
    out = kernels.sep_filter_valid(flat, taps)
    out = out.reshape(lead + out.shape[-2:])

    def bw(g):
        gflat = np.ascontiguousarray(g.reshape((-1,) + g.shape[-2:]))
        return (kernels.sep_filter_valid_T(gflat, taps, flat.shape).reshape(x.shape),)

    return make_result(out, (x,), bw)


def init_conv(rng: np.random.Generator, cout: int, cin: int, k: int,
              name: str) -> tuple[Tensor, Tensor]:
    """Fan-in scaled uniform init: weights and bias in +-sqrt(1/(cin*k*k))."""
    bound = np.sqrt(1.0 / (cin * k * k))
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
    b = rng.uniform(-bound, bound, size=(cout,))
    return (Tensor(w, requires_grad=True, name=f"{name}.w"),
            Tensor(b, requires_grad=True, name=f"{name}.b"))
