"""Procedural clean images and spatially varying transmission fields.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

import numpy as np

from ..errors import PreconditionError
from .asm import T_FLOOR


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def box_blur3(field: np.ndarray, times: int) -> np.ndarray:
    """Apply a 3x3 mean filter ``times`` times with symmetric borders."""
    out = field
    for _ in range(times):
        p = np.pad(out, 1, mode="symmetric")
        h, w = out.shape
        acc = np.zeros_like(out)
        for dy in range(3):
            for dx in range(3):
                acc += p[dy:dy + h, dx:dx + w]
        out = acc / 9.0
    return out


def gen_t_field(h: int, w: int, seed: int, t_lo: float, t_hi: float,
                smoothness: int) -> np.ndarray:
    """Smoothed white noise rescaled so that min == t_lo and max == t_hi."""
    if not (T_FLOOR <= t_lo < t_hi <= 1.0):
        raise PreconditionError(f"need {T_FLOOR} <= t_lo < t_hi <= 1, got [{t_lo}, {t_hi}]")
    if smoothness < 0:
        raise PreconditionError(f"smoothness must be >= 0, got {smoothness}")
    if h * w < 2:
        raise PreconditionError("a field needs at least two pixels to span a range")
    noise = box_blur3(rng_for(seed).standard_normal((h, w)), smoothness)
    lo, hi = noise.min(), noise.max()
    if hi == lo:
        raise PreconditionError("noise field collapsed to a constant; lower smoothness")
    t = t_lo + (noise - lo) / (hi - lo) * (t_hi - t_lo)
    t[noise == lo] = t_lo
    t[noise == hi] = t_hi
    return np.clip(t, t_lo, t_hi)


def gen_clean_image(h: int, w: int, seed: int) -> np.ndarray:
    """Gradient background, 2-5 flat rectangles/discs, faint smoothed texture."""
    rng = rng_for(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)

    theta = rng.uniform(0.0, 2.0 * np.pi)
    proj = np.cos(theta) * xx + np.sin(theta) * yy
    span = proj.max() - proj.min()
    s = (proj - proj.min()) / span if span > 0 else np.zeros_like(proj)
    c0 = rng.uniform(0.05, 0.8, size=3)
    c1 = rng.uniform(0.05, 0.8, size=3)
    img = c0 + (c1 - c0) * s[:, :, None]

    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.random() < 0.5:
            y0, y1 = np.sort(rng.uniform(0.0, 1.0, size=2))
            x0, x1 = np.sort(rng.uniform(0.0, 1.0, size=2))
            y1 = max(y1, y0 + 0.15)
            x1 = max(x1, x0 + 0.15)
            mask = (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1)
        else:
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            r = rng.uniform(0.1, 0.35)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[mask] = color

    tex = np.stack([box_blur3(rng.standard_normal((h, w)), 2) for _ in range(3)], axis=-1)
    sd = tex.std()
    if sd > 0:
        img = img + 0.03 * tex / sd
    return np.clip(img, 0.0, 1.0)
