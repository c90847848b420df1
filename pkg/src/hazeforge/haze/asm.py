"""Atmospheric scattering model: I = J*t + A*(1 - t)."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, PreconditionError

T_FLOOR = 0.02
INVERT_T_MIN = 0.05


def check_image(img: np.ndarray, name: str = "image") -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"{name} must be HxWx3, got {img.shape}")


def check_transmission(t: np.ndarray, floor: float = T_FLOOR) -> None:
    if t.ndim != 2:
        raise DimensionError(f"transmission field must be HxW, got {t.shape}")
    if not np.all(np.isfinite(t)) or t.min() < floor or t.max() > 1.0:
        raise PreconditionError(
            f"transmission must lie in [{floor}, 1], got [{t.min():.4g}, {t.max():.4g}]"
        )


def _check_airlight(A: float) -> float:
    A = float(A)
    if not 0.0 < A <= 1.0:
        raise PreconditionError(f"atmospheric light must lie in (0, 1], got {A}")
    return A


def _check_pair(img: np.ndarray, t: np.ndarray) -> None:
    check_image(img)
    if img.shape[:2] != t.shape:
        raise DimensionError(f"image {img.shape[:2]} and transmission {t.shape} differ")


def synthesize(J: np.ndarray, A: float, t: np.ndarray) -> np.ndarray:
    """Haze a clean image ``J`` (HxWx3) with scalar airlight ``A`` and field ``t`` (HxW)."""
    A = _check_airlight(A)
    _check_pair(J, t)
    check_transmission(t)
    tt = t[:, :, None]
    return np.clip(J * tt + A * (1.0 - tt), 0.0, 1.0)


def invert_asm(I: np.ndarray, A: float, t: np.ndarray) -> np.ndarray:
    """Analytic inverse of :func:`synthesize`; needs min(t) >= 0.05."""
    A = _check_airlight(A)
    _check_pair(I, t)
    check_transmission(t, floor=INVERT_T_MIN)
    tt = t[:, :, None]
    return np.clip((I - A * (1.0 - tt)) / tt, 0.0, 1.0)


def make_homogeneous_field(h: int, w: int, t: float) -> np.ndarray:
    if not T_FLOOR <= t <= 1.0:
        raise PreconditionError(f"t must lie in [{T_FLOOR}, 1], got {t}")
    return np.full((h, w), float(t))
