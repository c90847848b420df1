"""CPW1 weight files.

Layout (little-endian): b"CPW1", u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 rank, u32 dims[rank], fp64 data row-major.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"CPW1"


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # ascontiguousarray would make 0-d arrays 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError(f"not a CPW1 file (magic {buf[:4]!r})")
    try:
        pos = 4
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            nbytes = 8 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise FormatError(f"truncated data for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos) \
                .astype(np.float64).reshape(dims)
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"truncated CPW1 file: {exc}") from exc
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors))


def load_weights(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
