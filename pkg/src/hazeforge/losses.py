"""Training objective: reconstruction, perceptual, structural and colour terms.

Every loss takes ``[3,H,W]`` or batched ``[N,3,H,W]`` tensors; for a batch the
result is the mean of the per-sample losses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor, no_grad
from .errors import DimensionError, PreconditionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
COLOR_EPS = 1e-8
EXTRACTOR_SEED = 20240917
EXTRACTOR_WIDTHS = (16, 32, 64, 64)


def _pair(J, Y) -> tuple[Tensor, Tensor]:
    J = E.tensor.as_tensor(J)
    Y = E.tensor.as_tensor(Y)
    if J.shape != Y.shape:
        raise DimensionError(f"loss operands differ in shape: {J.shape} vs {Y.shape}")
    return J, Y


def _per_sample_axes(x: Tensor) -> tuple:
    if x.ndim == 3:
        return (0, 1, 2)
    if x.ndim == 4:
        return (1, 2, 3)
    raise DimensionError(f"expected [3,H,W] or [N,3,H,W], got {x.shape}")


def l1_loss(J, Y) -> Tensor:
    """Mean absolute difference over all elements."""
    J, Y = _pair(J, Y)
    return E.mean(E.abs(J - Y))


class FeatureExtractor:
    """Frozen four-stage conv pyramid used in place of a pretrained VGG.

    Stage l is conv3x3 + ReLU + 2x2 average pooling, widths 16/32/64/64, with
    He-uniform weights drawn once from ``EXTRACTOR_SEED``. The features are
    random projections, so perceptual-loss magnitudes are only meaningful
    relative to each other.
    """

    def __init__(self, seed: int = EXTRACTOR_SEED, widths=EXTRACTOR_WIDTHS):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.stages = []
        cin = 3
        for i, cout in enumerate(widths, 1):
            bound = np.sqrt(6.0 / (cin * 9))
            w = Tensor(rng.uniform(-bound, bound, size=(cout, cin, 3, 3)), name=f"phi{i}.w")
            b = Tensor(rng.uniform(-0.05, 0.05, size=(cout,)), name=f"phi{i}.b")
            self.stages.append((w, b))
            cin = cout

    def __call__(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[-2:]
        n = 2 ** len(self.stages)
        if h % n or w % n:
            raise DimensionError(f"feature extractor needs H, W divisible by {n}, got {h}x{w}")
        feats = []
        for w_, b_ in self.stages:
            x = E.avg_pool2(E.relu(E.conv2d(x, w_, b_, padding=1)))
            feats.append(x)
        return feats


_default_extractor: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = FeatureExtractor()
    return _default_extractor


def perceptual_loss(J, Y, ext: FeatureExtractor | None = None) -> Tensor:
    """Sum over stages of ||phi(J) - phi(Y)||_2 / (H_l * W_l)."""
    J, Y = _pair(J, Y)
    ext = ext or default_extractor()
    fj = ext(J)
    with no_grad():
        fy = ext(Tensor(Y.data))
    total = None
    for a, b in zip(fj, fy):
        axes = _per_sample_axes(a)
        dist = E.sqrt(E.sum(E.square(a - b), axis=axes))
        term = E.mean(dist) * (1.0 / (a.shape[-1] * a.shape[-2]))
        total = term if total is None else total + term
    return total


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim_map(J, Y) -> tuple[Tensor, Tensor]:
    """Per-pixel SSIM over valid window positions, and its mean.

    Uses the 11x11 Gaussian window (sigma 1.5) with C1 = 0.01^2, C2 = 0.03^2,
    evaluated per channel.
    """
    J, Y = _pair(J, Y)
    if J.ndim not in (3, 4) or J.shape[-1] < SSIM_WINDOW or J.shape[-2] < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs spatial size >= {SSIM_WINDOW}, got {J.shape}")
    taps = gaussian_taps()

    def filt(x):
        return E.separable_filter(x, taps)

    mu1, mu2 = filt(J), filt(Y)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s11 = filt(J * J) - mu1_sq
    s22 = filt(Y * Y) - mu2_sq
    s12 = filt(J * Y) - mu12
    num = (mu12 * 2.0 + SSIM_C1) * (s12 * 2.0 + SSIM_C2)
    den = (mu1_sq + mu2_sq + SSIM_C1) * (s11 + s22 + SSIM_C2)
    smap = num / den
    return smap, E.mean(smap)


def ssim_loss(J, Y) -> Tensor:
    return 1.0 - ssim_map(J, Y)[1]


def color_terms(J, Y) -> Tensor:
    """Per-pixel 1 - cos(angle between RGB vectors); 0 where either vector ~ 0."""
    J, Y = _pair(J, Y)
    _per_sample_axes(J)
    dot = E.sum(J * Y, axis=-3)
    nj = E.sqrt(E.sum(E.square(J), axis=-3))
    ny = E.sqrt(E.sum(E.square(Y), axis=-3))
    valid = ((nj.data >= COLOR_EPS) & (ny.data >= COLOR_EPS)).astype(np.float64)
    mask = Tensor(valid)
    denom = nj * ny * mask + Tensor(1.0 - valid)
    cos = E.clip(dot / denom, -1.0, 1.0)
    return (1.0 - cos) * mask


def color_loss(J, Y) -> Tensor:
    return E.mean(color_terms(J, Y))


@dataclass
class LossWeights:
    l1: float = 1.0
    perceptual: float = 1.0
    ssim: float = 1.0
    color: float = 1.0

    def __post_init__(self):
        for k, v in self.as_dict().items():
            if v < 0:
                raise PreconditionError(f"loss weight {k} must be >= 0, got {v}")

    def as_dict(self) -> dict:
        return {"l1": self.l1, "perceptual": self.perceptual, "ssim": self.ssim, "color": self.color}


LOSS_TERMS = {
    "l1": l1_loss,
    "perceptual": perceptual_loss,
    "ssim": ssim_loss,
    "color": color_loss,
}


def total_loss(J, Y, weights: LossWeights | None = None,
               ext: FeatureExtractor | None = None) -> tuple[Tensor, dict]:
    """Weighted sum of the four terms plus a float breakdown for logging.

    Terms with weight 0 are still evaluated for the breakdown, but outside the
    graph.
    """
    weights = weights or LossWeights()
    ext = ext or default_extractor()
    total = None
    parts = {}
    for name, lam in weights.as_dict().items():
        fn = LOSS_TERMS[name]
        args = (J, Y, ext) if name == "perceptual" else (J, Y)
        if lam == 0.0:
            with no_grad():
                parts[name] = fn(*args).item()
            continue
        term = fn(*args)
        parts[name] = term.item()
        weighted = term * lam
        total = weighted if total is None else total + weighted
    if total is None:
        total = Tensor(0.0)
    parts["total"] = total.item()
    return total, parts
