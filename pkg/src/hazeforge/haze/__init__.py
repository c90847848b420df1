"""Haze formation, synthetic data and concentration partitioning."""
from .asm import T_FLOOR, check_transmission, invert_asm, make_homogeneous_field, synthesize
from .dataset import (
    ConcentrationBin,
    DatasetConfig,
    assign_bin,
    build_dataset,
    load_pairs,
    load_split,
    partition_bins,
)
from .generate import box_blur3, gen_clean_image, gen_t_field

__all__ = [
    "T_FLOOR", "ConcentrationBin", "DatasetConfig", "assign_bin", "box_blur3",
    "build_dataset", "check_transmission", "gen_clean_image", "gen_t_field",
    "invert_asm", "load_pairs", "load_split", "make_homogeneous_field",
    "partition_bins", "synthesize",
]
