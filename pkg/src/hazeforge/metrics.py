"""Evaluation measures on HxWx3 images in [0,1]."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .engine import Tensor, no_grad
from .errors import DimensionError, PreconditionError
from .haze.asm import check_image
from .io import write_tsv
from .losses import ssim_map

PSNR_CAP = 99.0
DENSITY_PATCH = 15


def psnr(J: np.ndarray, Y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB."""
    J = np.asarray(J, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if J.shape != Y.shape:
        raise DimensionError(f"psnr: shapes differ {J.shape} vs {Y.shape}")
    mse = float(np.mean((J - Y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim_metric(J: np.ndarray, Y: np.ndarray) -> float:
    """Mean SSIM of two HxWx3 images (same math as the loss, no tape)."""
    J = np.asarray(J, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if J.shape != Y.shape:
        raise DimensionError(f"ssim: shapes differ {J.shape} vs {Y.shape}")
    check_image(J)
    with no_grad():
        _, m = ssim_map(Tensor(np.ascontiguousarray(J.transpose(2, 0, 1))),
                        Tensor(np.ascontiguousarray(Y.transpose(2, 0, 1))))
    return m.item()


def dark_channel(I: np.ndarray, patch: int) -> np.ndarray:
    """Min over an odd square patch (symmetric borders) of the per-pixel channel min."""
    if patch < 1 or patch % 2 == 0:
        raise PreconditionError(f"patch must be odd and >= 1, got {patch}")
    check_image(I)
    cmin = np.ascontiguousarray(I.min(axis=2))[None]
    return kernels.min_filter(cmin, patch)[0]


def haze_density_proxy(I: np.ndarray) -> float:
    """Mean 15x15 dark channel; rises with haze, stands in for FADE-style scores."""
    return float(dark_channel(I, DENSITY_PATCH).mean())


def to_hwc(x) -> np.ndarray:
    """Channel-first array/Tensor to an export-clamped HxWx3 image."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.clip(data.transpose(1, 2, 0), 0.0, 1.0)


@dataclass
class EvalRow:
    id: str
    psnr: float
    ssim: float
    density_hazy: float
    density_output: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    HEADER = ["id", "psnr_db", "ssim", "density_proxy_hazy", "density_proxy_output"]

    def means(self) -> dict[str, float]:
        if not self.rows:
            return {"psnr": float("nan"), "ssim": float("nan"),
                    "density_hazy": float("nan"), "density_output": float("nan")}
        n = len(self.rows)
        return {
            "psnr": float(np.sum([r.psnr for r in self.rows]) / n),
            "ssim": float(np.sum([r.ssim for r in self.rows]) / n),
            "density_hazy": float(np.sum([r.density_hazy for r in self.rows]) / n),
            "density_output": float(np.sum([r.density_output for r in self.rows]) / n),
        }

    def write(self, path) -> None:
        rows = [[r.id, r.psnr, r.ssim, r.density_hazy, r.density_output] for r in self.rows]
        m = self.means()
        rows.append(["MEAN", m["psnr"], m["ssim"], m["density_hazy"], m["density_output"]])
        write_tsv(path, self.HEADER, rows)


def evaluate(ids, outputs, cleans, hazies) -> EvalReport:
    """Score HxWx3 outputs against references; rows keep the input order."""
    report = EvalReport()
    for i, out, clean, hazy in zip(ids, outputs, cleans, hazies):
        out = np.clip(out, 0.0, 1.0)
        report.rows.append(EvalRow(str(i), psnr(out, clean), ssim_metric(out, clean),
                                   haze_density_proxy(hazy), haze_density_proxy(out)))
    return report
