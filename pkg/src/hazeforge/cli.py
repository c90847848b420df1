"""``hazeforge`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime or I/O error, 3 failed
verification.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, HazeforgeError
from .haze import (
    DatasetConfig,
    build_dataset,
    gen_clean_image,
    gen_t_field,
    load_pairs,
    make_homogeneous_field,
    partition_bins,
    synthesize,
)
from .io import read_manifest, read_ppm, write_ppm
from .metrics import evaluate
from .models import IENet, IENetConfig, IFNet, IFNetConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _json_file(path) -> dict:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1))[None]


def _hwc(x: np.ndarray) -> np.ndarray:
    return np.clip(x[0].transpose(1, 2, 0), 0.0, 1.0)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_clean(args) -> int:
    write_ppm(args.out, gen_clean_image(args.height, args.width, args.seed))
    return EXIT_OK


def cmd_synth(args) -> int:
    clean = read_ppm(args.clean)
    h, w, _ = clean.shape
    if args.t is not None:
        t = make_homogeneous_field(h, w, args.t)
    else:
        t = gen_t_field(h, w, args.seed, args.t_lo, args.t_hi, args.smoothness)
    write_ppm(args.out, synthesize(clean, args.airlight, t))
    if args.t_out:
        write_ppm(args.t_out, np.repeat(t[:, :, None], 3, axis=2))
    return EXIT_OK


TRAIN_KEYS = ("epochs", "batch_size", "lr0", "lr_halve_every", "seed")


def cmd_partition(args) -> int:
    base = _json_file(args.config) if args.config else {}
    cfg = DatasetConfig.from_dict({**base, **_overrides(args, (
        "n_bins", "t_min", "t_max", "train_per_bin", "test_per_bin", "nonhomog_train",
        "nonhomog_test", "image_size", "seed"))})
    cfg.validate()
    manifests = build_dataset(cfg, args.out_dir)
    for b in partition_bins(cfg.n_bins, cfg.t_min, cfg.t_max):
        print(f"bin {b.index}: t in [{b.t_lo:g}, {b.t_hi:g}]")
    for split, recs in manifests.items():
        print(f"{split}: {len(recs)} records")
    return EXIT_OK


def _train_config(args):
    from .trainer import TrainConfig

    base = _json_file(args.config) if args.config else {}
    return TrainConfig.from_dict({**base, **_overrides(args, TRAIN_KEYS)})


def cmd_train_ienet(args) -> int:
    from .trainer import train_ienet

    cfg = _train_config(args)
    records = [r for r in read_manifest(args.manifest) if r.bin_index == args.bin]
    if not records:
        raise ConfigError(f"{args.manifest}: no records in bin {args.bin}")
    hazy, clean = load_pairs(records, Path(args.manifest).parent)
    model_cfg = IENetConfig(args.variant, seed=args.init_seed)
    res = train_ienet(hazy, clean, cfg, model_cfg, [r.bin_index for r in records],
                      label=f"ienet bin{args.bin}")
    res.model.save(args.out)
    if args.curve:
        res.write_curve(args.curve)
    print(f"final loss {res.curve[-1]['total']:.6f} (epoch 0: {res.curve[0]['total']:.6f})")
    return EXIT_OK


def cmd_train_ifnet(args) -> int:
    from .trainer import train_ifnet

    cfg = _train_config(args)
    ienets = [IENet.load(p) for p in args.ienet]
    hz, cl = [], []
    for m in args.manifest:
        h, c = load_pairs(read_manifest(m), Path(m).parent)
        if h.shape[0]:
            hz.append(h)
            cl.append(c)
    if not hz:
        raise ConfigError("no training records in the given manifests")
    model_cfg = IFNetConfig(len(ienets), args.fusion_mode, seed=args.init_seed)
    res = train_ifnet(ienets, np.concatenate(hz), np.concatenate(cl), cfg, model_cfg)
    res.model.save(args.out)
    if args.curve:
        res.write_curve(args.curve)
    print(f"final loss {res.curve[-1]['total']:.6f} (epoch 0: {res.curve[0]['total']:.6f})")
    return EXIT_OK


def _load_pipeline(ienet_paths, ifnet_path):
    ienets = [IENet.load(p) for p in ienet_paths]
    ifnet = IFNet.load(ifnet_path) if ifnet_path else None
    if ifnet is None and len(ienets) != 1:
        raise ConfigError("without --ifnet exactly one --ienet is required")
    if ifnet is not None and ifnet.config.n_branches != len(ienets):
        raise DimensionError(f"branch count mismatch: {len(ienets)} IENet weight files given, "
                             f"IFNet expects {ifnet.config.n_branches}")
    return ienets, ifnet


def _run(ienets, ifnet, hazy):
    from .trainer import branch_outputs, dehaze

    if ifnet is None:
        outs = branch_outputs(ienets, hazy)
        return outs[0], outs
    return dehaze(ienets, ifnet, hazy)


def cmd_dehaze(args) -> int:
    ienets, ifnet = _load_pipeline(args.ienet, args.ifnet)
    fused, branches = _run(ienets, ifnet, _chw(read_ppm(args.input)))
    write_ppm(args.out, _hwc(fused))
    if args.dump_branches:
        out = Path(args.out)
        for i, b in enumerate(branches, 1):
            write_ppm(out.with_name(f"{out.stem}_branch{i}{out.suffix}"), _hwc(b))
    return EXIT_OK


def cmd_eval(args) -> int:
    ienets, ifnet = _load_pipeline(args.ienet, args.ifnet)
    records = read_manifest(args.manifest)
    if not records:
        raise ConfigError(f"{args.manifest} has no records")
    hazy, clean = load_pairs(records, Path(args.manifest).parent)
    out, _ = _run(ienets, ifnet, hazy)

    def imgs(batch):
        return [np.clip(x.transpose(1, 2, 0), 0.0, 1.0) for x in batch]

    report = evaluate([Path(r.hazy_path).stem for r in records], imgs(out), imgs(clean), imgs(hazy))
    report.write(args.report)
    m = report.means()
    print(f"mean PSNR {m['psnr']:.4f} dB  SSIM {m['ssim']:.4f}  "
          f"density {m['density_hazy']:.4f} -> {m['density_output']:.4f}")
    return EXIT_OK


def cmd_cross_eval(args) -> int:
    from .trainer import cross_eval

    ienets = [IENet.load(p) for p in args.ienet]
    matrix = cross_eval(ienets, read_manifest(args.manifest), Path(args.manifest).parent)
    if args.out:
        matrix.write(args.out)
    for i, row in enumerate(matrix.values, 1):
        print(f"ienet{i}\t" + "\t".join(f"{v:.4f}" for v in row))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import format_table, run_suite

    results = run_suite(args.seed, only=set(args.only) if args.only else None)
    if not results:
        raise ConfigError(f"no checks named {args.only}")
    print(format_table(results))
    return EXIT_OK if all(r.report.passed for r in results) else EXIT_VERIFY


def cmd_run_experiment(args) -> int:
    from .trainer import ExperimentConfig, run_experiment

    d = _json_file(args.config)
    if args.output_dir:
        d["output_dir"] = args.output_dir
    exp = ExperimentConfig.from_dict(d)
    runs = run_experiment(exp)
    for name, run in runs.items():
        s = run.evaluation.summary()
        print(f"{name}: input {s['psnr_input']:.4f} dB, fused {s['psnr_fused']:.4f} dB")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hazeforge", description="Concentration-partitioned dehazing toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-clean", help="procedural clean image")
    s.add_argument("--height", type=int, default=32)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_clean)

    s = sub.add_parser("synth", help="add haze to a clean image")
    s.add_argument("--clean", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--airlight", type=float, default=0.85)
    s.add_argument("--t", type=float, help="homogeneous transmission")
    s.add_argument("--t-lo", type=float, default=0.3)
    s.add_argument("--t-hi", type=float, default=0.9)
    s.add_argument("--smoothness", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--t-out", help="also write the transmission map as a grey PPM")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("partition", help="build a binned synthetic dataset")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config", help="JSON dataset config; flags override it")
    for flag, typ in (("n-bins", int), ("t-min", float), ("t-max", float), ("train-per-bin", int),
                      ("test-per-bin", int), ("nonhomog-train", int), ("nonhomog-test", int),
                      ("image-size", int), ("seed", int)):
        s.add_argument(f"--{flag}", type=typ)
    s.set_defaults(func=cmd_partition)

    def train_flags(s):
        s.add_argument("--config", help="JSON train config; flags override it")
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--lr0", type=float)
        s.add_argument("--lr-halve-every", type=int)
        s.add_argument("--seed", type=int, help="shuffling seed")
        s.add_argument("--init-seed", type=int, default=0, help="weight initialisation seed")
        s.add_argument("--out", required=True)
        s.add_argument("--curve", help="write the per-epoch loss curve TSV here")

    s = sub.add_parser("train-ienet", help="stage 1: train one IENet on a bin")
    s.add_argument("--manifest", required=True)
    s.add_argument("--bin", type=int, required=True)
    s.add_argument("--variant", default="res")
    train_flags(s)
    s.set_defaults(func=cmd_train_ienet)

    s = sub.add_parser("train-ifnet", help="stage 2: train IFNet on frozen IENets")
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--ienet", action="append", required=True)
    s.add_argument("--fusion-mode", default="stacking", choices=("stacking", "weighted"))
    train_flags(s)
    s.set_defaults(func=cmd_train_ifnet)

    s = sub.add_parser("dehaze", help="run the pipeline on one image")
    s.add_argument("--ienet", action="append", required=True)
    s.add_argument("--ifnet")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-branches", action="store_true",
                   help="also write <out>_branch<i> for every IENet output")
    s.set_defaults(func=cmd_dehaze)

    s = sub.add_parser("eval", help="score the pipeline on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ienet", action="append", required=True)
    s.add_argument("--ifnet")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("cross-eval", help="PSNR of every IENet on every bin")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ienet", action="append", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cross_eval)

    s = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--only", action="append", help="restrict to a named check")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("run-experiment", help="dataset, both stages, reports")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir", help="override output_dir from the config")
    s.set_defaults(func=cmd_run_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        print("hazeforge: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hazeforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HazeforgeError, OSError) as exc:
        print(f"hazeforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
