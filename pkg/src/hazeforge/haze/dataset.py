"""Concentration bins and synthetic paired corpora written to disk."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError, PreconditionError
from ..io import Record, read_manifest, read_ppm, write_manifest, write_ppm
from .asm import T_FLOOR, make_homogeneous_field, synthesize
from .generate import gen_clean_image, gen_t_field


@dataclass(frozen=True)
class ConcentrationBin:
    index: int  # 1-based
    t_lo: float
    t_hi: float

    def __contains__(self, t: float) -> bool:
        return self.t_lo <= t <= self.t_hi


def partition_bins(n: int, t_min: float, t_max: float) -> list[ConcentrationBin]:
    """Split [t_min, t_max] into ``n`` equal-width contiguous bins."""
    if n < 1:
        raise PreconditionError(f"need at least one bin, got n={n}")
    if not T_FLOOR <= t_min < t_max <= 1.0:
        raise PreconditionError(f"need {T_FLOOR} <= t_min < t_max <= 1, got [{t_min}, {t_max}]")
    edges = [t_min + (t_max - t_min) * i / n for i in range(n)] + [t_max]
    return [ConcentrationBin(i + 1, edges[i], edges[i + 1]) for i in range(n)]


def assign_bin(t_mean: float, bins: list[ConcentrationBin]) -> int:
    """Index of the bin holding ``t_mean``; shared edges go to the lower bin."""
    for b in bins:
        if t_mean in b:
            return b.index
    raise PreconditionError(
        f"t={t_mean} outside the partitioned range [{bins[0].t_lo}, {bins[-1].t_hi}]"
    )


@dataclass
class DatasetConfig:
    n_bins: int = 2
    t_min: float = 0.3
    t_max: float = 0.9
    train_per_bin: int = 100
    test_per_bin: int = 40
    nonhomog_train: int = 100
    nonhomog_test: int = 40
    image_size: int = 32
    a_lo: float = 0.7
    a_hi: float = 1.0
    smoothness: int = 6
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**d)

    def validate(self) -> None:
        partition_bins(self.n_bins, self.t_min, self.t_max)
        if min(self.train_per_bin, self.test_per_bin, self.nonhomog_train,
               self.nonhomog_test) < 0:
            raise ConfigError("record counts must be non-negative")
        if self.image_size < 2:
            raise ConfigError(f"image_size must be >= 2, got {self.image_size}")
        if not 0.0 < self.a_lo <= self.a_hi <= 1.0:
            raise ConfigError(f"need 0 < a_lo <= a_hi <= 1, got [{self.a_lo}, {self.a_hi}]")


SPLITS = ("train", "test", "nonhomog_train", "nonhomog_test")


def record_seed(seed: int, split: str, bin_index: int, idx: int) -> int:
    ss = np.random.SeedSequence([int(seed), SPLITS.index(split), int(bin_index), int(idx)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _haze_rng(rseed: int) -> np.random.Generator:
    # separate stream from the clean-image generator, which uses rseed directly
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([rseed, 1])))


def make_pair(cfg: DatasetConfig, split: str, bin_: ConcentrationBin | None, idx: int):
    """Generate one (hazy, clean, t_mean, seed) sample in memory."""
    size = cfg.image_size
    rseed = record_seed(cfg.seed, split, 0 if bin_ is None else bin_.index, idx)
    clean = gen_clean_image(size, size, rseed)
    rng = _haze_rng(rseed)
    if bin_ is None:
        field_seed = int(rng.integers(0, 2**63))
        t = gen_t_field(size, size, field_seed, cfg.t_min, cfg.t_max, cfg.smoothness)
    else:
        t = make_homogeneous_field(size, size, rng.uniform(bin_.t_lo, bin_.t_hi))
    A = rng.uniform(cfg.a_lo, cfg.a_hi)
    return synthesize(clean, A, t), clean, float(t.mean()), rseed


def build_dataset(cfg: DatasetConfig, out_dir) -> dict[str, list[Record]]:
    """Write all splits as PPM pairs plus one manifest per split.

    Homogeneous splits (``train``, ``test``) draw a scalar t uniformly inside
    each bin; ``nonhomog_*`` splits use smoothed-noise fields spanning the
    whole range and carry bin index 0.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    bins = partition_bins(cfg.n_bins, cfg.t_min, cfg.t_max)
    plan = {
        "train": [(b, cfg.train_per_bin) for b in bins],
        "test": [(b, cfg.test_per_bin) for b in bins],
        "nonhomog_train": [(None, cfg.nonhomog_train)],
        "nonhomog_test": [(None, cfg.nonhomog_test)],
    }
    manifests = {}
    for split, groups in plan.items():
        records = []
        for bin_, count in groups:
            tag = "mix" if bin_ is None else f"b{bin_.index}"
            for i in range(count):
                hazy, clean, t_mean, rseed = make_pair(cfg, split, bin_, i)
                if bin_ is not None and t_mean not in bin_:
                    raise AssertionError(f"t_mean {t_mean} escaped bin {bin_}")
                hp = f"{split}/{tag}_{i:04d}_hazy.ppm"
                cp = f"{split}/{tag}_{i:04d}_clean.ppm"
                try:
                    write_ppm(out_dir / hp, hazy)
                    write_ppm(out_dir / cp, clean)
                except OSError as exc:
                    raise OSError(f"failed writing {out_dir / hp}: {exc}") from exc
                records.append(Record(hp, cp, 0 if bin_ is None else bin_.index, t_mean, rseed))
        write_manifest(out_dir / f"{split}.tsv", records)
        manifests[split] = records
    return manifests


def load_pairs(records: list[Record], root) -> tuple[np.ndarray, np.ndarray]:
    """Read records into channel-first stacks ``hazy[N,3,H,W]`` and ``clean[N,3,H,W]``."""
    root = Path(root)
    if not records:
        return np.zeros((0, 3, 0, 0)), np.zeros((0, 3, 0, 0))
    hazy = np.stack([read_ppm(root / r.hazy_path).transpose(2, 0, 1) for r in records])
    clean = np.stack([read_ppm(root / r.clean_path).transpose(2, 0, 1) for r in records])
    return np.ascontiguousarray(hazy), np.ascontiguousarray(clean)


def load_split(root, split: str) -> list[Record]:
    return read_manifest(Path(root) / f"{split}.tsv")
