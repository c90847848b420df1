from __future__ import annotations

import hashlib

import numpy as np

from ..engine import Tensor, load_weights, save_weights
from ..errors import FormatError


class ParamModel:
    """Named parameters with CPW1 save/load; subclasses fill ``self.params``."""

    params: dict[str, Tensor]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise FormatError(f"weight names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise FormatError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def save(self, path) -> None:
        save_weights(path, self.state_dict())

    def digest(self) -> str:
        """SHA-256 over names and raw parameter bytes."""
        h = hashlib.sha256()
        for k, p in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @staticmethod
    def _read(path) -> dict[str, np.ndarray]:
        return load_weights(path)
