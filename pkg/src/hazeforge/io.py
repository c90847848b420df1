"""File formats: binary PPM images and the tab-separated manifests/reports."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError


def quantize(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8, clamped and rounded half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """Write an H x W x 3 float image in [0,1] as P6 with maxval 255."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an HxWx3 image, got {img.shape}")
    h, w, _ = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + quantize(img).tobytes())


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        out.append(buf[start:pos])
    return out, pos


def read_ppm(path) -> np.ndarray:
    """Read a P6 file into an H x W x 3 float64 array in [0,1]."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * 3
    if len(buf) - pos < n * np.dtype(dtype).itemsize:
        raise FormatError(f"{path}: raster truncated")
    raw = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    return raw.reshape(h, w, 3).astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# manifests

MANIFEST_HEADER = "#hazy_path\tclean_path\tbin_index\tt_mean\tseed"


@dataclass(frozen=True)
class Record:
    hazy_path: str
    clean_path: str
    bin_index: int  # 0 marks a non-homogeneous record (no single bin)
    t_mean: float
    seed: int


def write_manifest(path, records) -> None:
    lines = [MANIFEST_HEADER]
    for r in records:
        lines.append(f"{r.hazy_path}\t{r.clean_path}\t{r.bin_index}\t{r.t_mean!r}\t{r.seed}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[Record]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
        try:
            out.append(Record(cols[0], cols[1], int(cols[2]), float(cols[3]), int(cols[4])))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def fmt(x: float) -> str:
    """Compact float formatting that round-trips exactly."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return repr(float(x))


def write_tsv(path, header: list[str], rows: list[list]) -> None:
    lines = ["#" + "\t".join(header)]
    for row in rows:
        lines.append("\t".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
