"""Image enhancement network: predicts a stretching coefficient R, returns R * I."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..engine import Tensor, concat_channels, conv2d, init_conv, mul, relu
from ..errors import ConfigError, DimensionError, FormatError
from .base import ParamModel

VARIANTS = ("res", "k3", "k5", "k7", "k9")


@dataclass
class IENetConfig:
    variant: str = "res"
    num_residual_modules: int = 4
    base_channels: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown IENet variant {self.variant!r}; choose from {VARIANTS}")
        if self.base_channels < 1 or self.num_residual_modules < 1:
            raise ConfigError("base_channels and num_residual_modules must be >= 1")

    @property
    def kernel(self) -> int:
        return 3 if self.variant == "res" else int(self.variant[1:])


class IENet(ParamModel):
    """Residual variant: 5x5 stem, residual modules, long skip, 5x5 head.

    Each residual module is three [3x3 conv + ReLU] groups and one more 3x3
    conv whose output is added to the module input. The stem features are
    concatenated with the last module's output before the head, giving the
    head its 2*base_channels inputs. ``kX`` variants replace all of this
    with a plain depth-matched stack of XxX conv + ReLU layers.
    """

    def __init__(self, config: IENetConfig | None = None):
        self.config = config = config or IENetConfig()
        config.validate()
        rng = np.random.Generator(np.random.PCG64(config.seed))
        c = config.base_channels
        self.params: dict[str, Tensor] = {}

        def add(name, cout, cin, k):
            w, b = init_conv(rng, cout, cin, k, name)
            self.params[w.name] = w
            self.params[b.name] = b

        if config.variant == "res":
            add("conv_in", c, 3, 5)
            for m in range(1, config.num_residual_modules + 1):
                for j in range(1, 5):
                    add(f"res{m}.g{j}", c, c, 3)
            add("conv_out", 3, 2 * c, 5)
        else:
            k = config.kernel
            add("conv_in", c, 3, k)
            for i in range(1, 4 * config.num_residual_modules + 1):
                add(f"layer{i}", c, c, k)
            add("conv_out", 3, c, k)

    def conv_count(self) -> int:
        return sum(1 for k in self.params if k.endswith(".w"))

    def _conv(self, x, name, relu_after=True):
        w = self.params[f"{name}.w"]
        y = conv2d(x, w, self.params[f"{name}.b"], stride=1, padding=w.shape[-1] // 2)
        return relu(y) if relu_after else y

    def coefficient(self, x: Tensor) -> Tensor:
        cfg = self.config
        k = max(5, cfg.kernel)
        if x.ndim not in (3, 4) or x.shape[-3] != 3:
            raise DimensionError(f"IENet expects [3,H,W] or [N,3,H,W], got {x.shape}")
        if x.shape[-1] < k or x.shape[-2] < k:
            raise DimensionError(f"IENet input {x.shape[-2:]} smaller than kernel {k}")
        if cfg.variant == "res":
            stem = self._conv(x, "conv_in")
            h = stem
            for m in range(1, cfg.num_residual_modules + 1):
                r = h
                for j in range(1, 4):
                    r = self._conv(r, f"res{m}.g{j}")
                r = self._conv(r, f"res{m}.g4", relu_after=False)
                h = r + h
            return self._conv(concat_channels([stem, h]), "conv_out")
        h = self._conv(x, "conv_in")
        for i in range(1, 4 * cfg.num_residual_modules + 1):
            h = self._conv(h, f"layer{i}")
        return self._conv(h, "conv_out")

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(R, J_E)`` with ``J_E = R * x`` (unclamped)."""
        R = self.coefficient(x)
        return R, mul(R, x)

    __call__ = forward

    @classmethod
    def load(cls, path) -> "IENet":
        state = cls._read(path)
        return cls.from_state(state)

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "IENet":
        if "conv_in.w" not in state:
            raise FormatError("not an IENet weight file (no conv_in.w)")
        c, _, k, _ = state["conv_in.w"].shape
        mods = {int(m.group(1)) for key in state if (m := re.match(r"res(\d+)\.", key))}
        layers = {int(m.group(1)) for key in state if (m := re.match(r"layer(\d+)\.", key))}
        if mods:
            cfg = IENetConfig("res", max(mods), c)
        elif layers and len(layers) % 4 == 0:
            cfg = IENetConfig(f"k{k}", len(layers) // 4, c)
        else:
            raise FormatError("cannot infer IENet architecture from weight names")
        model = cls(cfg)
        model.load_state_dict(state)
        return model
