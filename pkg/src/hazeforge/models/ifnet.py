"""Image fusion network over n branch outputs."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..engine import Tensor, concat_channels, conv2d, expand, init_conv, mul, relu, sigmoid, take
from ..errors import ConfigError, DimensionError, FormatError
from .base import ParamModel

MODES = ("stacking", "weighted")


@dataclass
class IFNetConfig:
    n_branches: int = 2
    fusion_mode: str = "stacking"
    base_channels: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.fusion_mode not in MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion_mode!r}; choose from {MODES}")
        if self.n_branches < 1 or self.base_channels < 1:
            raise ConfigError("n_branches and base_channels must be >= 1")


class IFNet(ParamModel):
    """Per-branch four-level feature extractors merged deepest-first.

    Level stacks S^l concatenate the branch features of level l. S^4 is
    reduced to ``base_channels``; each shallower level is merged as
    G^l = ReLU(conv(concat(G^{l+1}, S^l))). The head emits a 3-channel image
    (stacking) or n sigmoid weight maps applied to the inputs (weighted).
    """

    def __init__(self, config: IFNetConfig | None = None):
        self.config = config = config or IFNetConfig()
        config.validate()
        rng = np.random.Generator(np.random.PCG64(config.seed))
        n, c = config.n_branches, config.base_channels
        self.params: dict[str, Tensor] = {}

        def add(name, cout, cin):
            w, b = init_conv(rng, cout, cin, 3, name)
            self.params[w.name] = w
            self.params[b.name] = b

        for i in range(1, n + 1):
            add(f"entry{i}", c, 3)
            for lvl in (2, 3, 4):
                add(f"level{i}.{lvl}", c, c)
        add("reduce", c, n * c)
        for lvl in (3, 2, 1):
            add(f"merge{lvl}", c, c + n * c)
        add("head", 3 if config.fusion_mode == "stacking" else n, c)

    def _conv(self, x, name):
        return conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=1, padding=1)

    def _check(self, branches) -> list[Tensor]:
        branches = list(branches)
        n = self.config.n_branches
        if len(branches) != n:
            raise DimensionError(f"IFNet built for {n} branches, got {len(branches)}")
        shape = branches[0].shape
        for b in branches:
            if b.shape != shape:
                raise DimensionError(f"branch shapes differ: {shape} vs {b.shape}")
        if len(shape) not in (3, 4) or shape[-3] != 3:
            raise DimensionError(f"branches must be [3,H,W] or [N,3,H,W], got {shape}")
        return branches

    def _head(self, branches: list[Tensor]) -> Tensor:
        levels: list[list[Tensor]] = [[] for _ in range(4)]
        for i, J in enumerate(branches, 1):
            f = relu(self._conv(J, f"entry{i}"))
            levels[0].append(f)
            for lvl in (2, 3, 4):
                f = relu(self._conv(f, f"level{i}.{lvl}"))
                levels[lvl - 1].append(f)
        stacks = [concat_channels(feats) for feats in levels]

        g = relu(self._conv(stacks[3], "reduce"))
        for lvl in (3, 2, 1):
            g = relu(self._conv(concat_channels([g, stacks[lvl - 1]]), f"merge{lvl}"))
        return self._conv(g, "head")

    def forward(self, branches) -> Tensor:
        branches = self._check(branches)
        head = self._head(branches)
        if self.config.fusion_mode == "stacking":
            return relu(head)
        weights = sigmoid(head)
        out = None
        for i, J in enumerate(branches):
            wi = expand(take(weights, i, i + 1, axis=-3), J.shape)
            term = mul(wi, J)
            out = term if out is None else out + term
        return out

    __call__ = forward

    def weight_maps(self, branches) -> np.ndarray:
        """Per-branch sigmoid weights of the weighted mode."""
        if self.config.fusion_mode != "weighted":
            raise ConfigError("weight maps exist only in weighted mode")
        return sigmoid(self._head(self._check(branches))).data

    @classmethod
    def load(cls, path) -> "IFNet":
        return cls.from_state(cls._read(path))

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "IFNet":
        entries = {int(m.group(1)) for key in state if (m := re.match(r"entry(\d+)\.", key))}
        if not entries or "head.w" not in state:
            raise FormatError("not an IFNet weight file")
        n = max(entries)
        c = state["entry1.w"].shape[0]
        head_out = state["head.w"].shape[0]
        if head_out == 3 and n != 3:
            mode = "stacking"
        elif head_out == n and n != 3:
            mode = "weighted"
        elif n == 3:
            # 3 branches: head width 3 is ambiguous; weighted files carry a marker tensor
            mode = "weighted" if "mode.weighted" in state else "stacking"
        else:
            raise FormatError(f"head width {head_out} fits neither mode for n={n}")
        model = cls(IFNetConfig(n, mode, c))
        state = {k: v for k, v in state.items() if k != "mode.weighted"}
        model.load_state_dict(state)
        return model

    def state_dict(self) -> dict[str, np.ndarray]:
        state = super().state_dict()
        if self.config.fusion_mode == "weighted" and self.config.n_branches == 3:
            state["mode.weighted"] = np.ones(1)
        return state
