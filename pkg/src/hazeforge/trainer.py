"""Two-stage training, cross-evaluation and the ablation drivers.

Stage 1 fits one IENet per concentration bin on homogeneous pairs. Stage 2
freezes those networks, precomputes their outputs once, and fits an IFNet on
a mixed corpus (homogeneous pairs from every bin plus non-homogeneous ones).
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import engine as E
from .engine import Tensor, no_grad
from .errors import ConfigError, ContractError, HazeforgeError, TrainingError
from .haze.dataset import DatasetConfig, assign_bin, build_dataset, load_pairs, partition_bins
from .io import Record, write_tsv
from .losses import LOSS_TERMS, LossWeights, default_extractor, total_loss
from .metrics import EvalReport, evaluate, psnr
from .models import IENet, IENetConfig, IFNet, IFNetConfig

log = logging.getLogger(__name__)

EVAL_CHUNK = 40
CURVE_HEADER = ["epoch", "lr", *LOSS_TERMS, "total"]
STEP_HEADER = ["step", *LOSS_TERMS, "total"]


def threads_from_env(default: int | None = None) -> int:
    """Worker cap from ``HAZEFORGE_THREADS`` (positive int), else CPU count."""
    raw = os.environ.get("HAZEFORGE_THREADS")
    if raw is None:
        return default or os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"HAZEFORGE_THREADS must be a positive integer, got {raw!r}")
    return n


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0])


def _from_dict(cls, d: dict, what: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{what}: expected an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr0: float = 1e-3
    lr_halve_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_weights: dict = field(default_factory=lambda: LossWeights().as_dict())
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = _from_dict(cls, d, "train config")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr_halve_every < 1:
            raise ConfigError("epochs, batch_size and lr_halve_every must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("need 0 <= beta1, beta2 < 1 and eps > 0")
        self.weights()

    def weights(self) -> LossWeights:
        try:
            return _from_dict(LossWeights, dict(self.loss_weights), "loss weight")
        except HazeforgeError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: halve ``lr0`` every ``lr_halve_every`` epochs."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halve_every)


@dataclass
class TrainResult:
    model: IENet | IFNet
    curve: list[dict]  # per-epoch sample-weighted means
    steps: list[dict] = field(default_factory=list)  # per-step batch losses

    @property
    def improved(self) -> bool:
        return self.curve[-1]["total"] < self.curve[0]["total"]

    def write_curve(self, path, steps_path=None) -> None:
        write_tsv(path, CURVE_HEADER, [[r[k] for k in CURVE_HEADER] for r in self.curve])
        if steps_path is not None:
            write_tsv(steps_path, STEP_HEADER, [[r[k] for k in STEP_HEADER] for r in self.steps])


def _fit(model, forward, target: np.ndarray, cfg: TrainConfig, label: str) -> TrainResult:
    """Mini-batch Adam on ``total_loss(forward(idx), target[idx])``.

    The batch loss is the mean of per-sample losses, so its gradient is the
    mean of per-sample gradients.
    """
    cfg.validate()
    n = target.shape[0]
    weights = cfg.weights()
    ext = default_extractor()
    params = model.parameters()
    state = E.AdamState.for_params(params, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    curve, steps = [], []
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(n)
        sums = dict.fromkeys([*LOSS_TERMS, "total"], 0.0)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            J = forward(idx)
            loss, parts = total_loss(J, Tensor(target[idx]), weights, ext)
            if not all(math.isfinite(v) for v in parts.values()):
                raise TrainingError(f"{label}: non-finite loss at step {step} (epoch {epoch}): {parts}",
                                    step=step)
            E.backward(loss)
            E.adam_step(params, [p.grad for p in params], state, lr)
            for k in sums:
                sums[k] += parts[k] * len(idx)
            steps.append({"step": step, **parts})
            step += 1
        row = {"epoch": epoch, "lr": lr, **{k: v / n for k, v in sums.items()}}
        curve.append(row)
        log.info("%s epoch %d lr %.3g loss %.5f", label, epoch, lr, row["total"])
    result = TrainResult(model, curve, steps)
    if cfg.epochs > 1 and not result.improved:
        log.warning("%s: final-epoch loss %.5f did not drop below epoch-0 loss %.5f",
                    label, curve[-1]["total"], curve[0]["total"])
    return result


def train_ienet(hazy: np.ndarray, clean: np.ndarray, cfg: TrainConfig,
                model_cfg: IENetConfig | None = None, bin_indices=None,
                label: str = "ienet") -> TrainResult:
    """Fit one IENet on ``hazy[N,3,H,W] -> clean[N,3,H,W]`` pairs of a single bin."""
    if hazy.shape[0] == 0:
        raise ConfigError(f"{label}: empty training subset")
    if hazy.shape != clean.shape:
        raise ConfigError(f"{label}: hazy {hazy.shape} and clean {clean.shape} differ")
    if bin_indices is not None and len(set(bin_indices)) > 1:
        raise ConfigError(f"{label}: records span several bins {sorted(set(bin_indices))}")
    model = IENet(model_cfg or IENetConfig())
    return _fit(model, lambda idx: model(Tensor(hazy[idx]))[1], clean, cfg, label)


def branch_outputs(ienets, hazy: np.ndarray) -> list[np.ndarray]:
    """Unclamped J_E of every IENet, computed without a tape."""
    outs = []
    with no_grad():
        for net in ienets:
            chunks = [net(Tensor(hazy[s:s + EVAL_CHUNK]))[1].data
                      for s in range(0, hazy.shape[0], EVAL_CHUNK)]
            outs.append(np.concatenate(chunks) if chunks else np.zeros_like(hazy))
    return outs


def train_ifnet(ienets, hazy: np.ndarray, clean: np.ndarray, cfg: TrainConfig,
                model_cfg: IFNetConfig | None = None, label: str = "ifnet") -> TrainResult:
    """Fit an IFNet on frozen IENet outputs; the IENets are never updated."""
    ienets = list(ienets)
    if not ienets:
        raise ConfigError(f"{label}: need at least one frozen IENet")
    if hazy.shape[0] == 0:
        raise ConfigError(f"{label}: empty training subset")
    model_cfg = model_cfg or IFNetConfig(n_branches=len(ienets))
    if model_cfg.n_branches != len(ienets):
        raise ConfigError(f"{label}: IFNet expects {model_cfg.n_branches} branches, "
                          f"got {len(ienets)} IENets")
    before = [net.digest() for net in ienets]
    branches = branch_outputs(ienets, hazy)
    model = IFNet(model_cfg)
    result = _fit(model, lambda idx: model([Tensor(b[idx]) for b in branches]), clean, cfg, label)
    if [net.digest() for net in ienets] != before:
        raise ContractError(f"{label}: frozen IENet weights changed during stage 2")
    return result


def dehaze(ienets, ifnet: IFNet, hazy: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Full pipeline on ``hazy[N,3,H,W]``; returns unclamped (fused, branches)."""
    branches = branch_outputs(ienets, hazy)
    with no_grad():
        fused = [ifnet([Tensor(b[s:s + EVAL_CHUNK]) for b in branches]).data
                 for s in range(0, hazy.shape[0], EVAL_CHUNK)]
    return (np.concatenate(fused) if fused else np.zeros_like(hazy)), branches


def _hwc(batch: np.ndarray) -> list[np.ndarray]:
    return [np.clip(x.transpose(1, 2, 0), 0.0, 1.0) for x in batch]


# ---------------------------------------------------------------------------
# cross-evaluation

@dataclass
class CrossEvalMatrix:
    """Entry (i, j): mean PSNR of IENet i on the test images of bin j."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or not np.all(np.isfinite(v)):
            raise ContractError(f"cross-eval matrix must be square and finite, got {v.shape}")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def diagonal_dominant_rows(self) -> list[bool]:
        v = self.values
        return [bool(all(v[i, i] > v[i, j] for j in range(self.n) if j != i)) for i in range(self.n)]

    def write(self, path) -> None:
        header = ["model", *[f"bin{j + 1}" for j in range(self.n)]]
        write_tsv(path, header, [[f"ienet{i + 1}", *map(float, row)] for i, row in enumerate(self.values)])


def cross_eval(ienets, records: list[Record], root) -> CrossEvalMatrix:
    """Mean PSNR of each IENet (clamped output) on each bin's test records."""
    n = len(ienets)
    by_bin = {j: [r for r in records if r.bin_index == j] for j in range(1, n + 1)}
    missing = [j for j, rs in by_bin.items() if not rs]
    if missing:
        raise ConfigError(f"test manifest has no records for bins {missing}")
    values = np.zeros((n, n))
    for j in range(1, n + 1):
        hazy, clean = load_pairs(by_bin[j], root)
        refs = _hwc(clean)
        for i, out in enumerate(branch_outputs(ienets, hazy)):
            scores = [psnr(o, c) for o, c in zip(_hwc(out), refs)]
            values[i, j - 1] = float(np.sum(scores) / len(scores))
    return CrossEvalMatrix(values)


# ---------------------------------------------------------------------------
# experiments

ABLATIONS = ("none", "partitions", "fusion", "color")


@dataclass
class ExperimentConfig:
    output_dir: str
    dataset: dict = field(default_factory=dict)
    ienet: dict = field(default_factory=dict)
    ifnet: dict = field(default_factory=dict)
    stage1: dict = field(default_factory=dict)
    stage2: dict = field(default_factory=dict)
    ablation: str = "none"
    partitions: list = field(default_factory=lambda: [1, 2, 3])

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "output_dir" not in d:
            raise ConfigError("experiment config needs output_dir")
        cfg = _from_dict(cls, d, "experiment")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(d)

    def validate(self) -> None:
        self.data_config()
        self.ienet_config(0, 1)
        self.ifnet_config(1)
        self.train_config(1)
        self.train_config(2)
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if not self.partitions or any(int(n) < 1 for n in self.partitions):
            raise ConfigError("partitions must be a non-empty list of positive counts")

    def data_config(self) -> DatasetConfig:
        cfg = DatasetConfig.from_dict(self.dataset)
        cfg.validate()
        return cfg

    def ienet_config(self, branch: int, n: int) -> IENetConfig:
        base = _from_dict(IENetConfig, self.ienet, "ienet")
        base.validate()
        return replace(base, seed=derive_seed(base.seed, n, branch))

    def ifnet_config(self, n: int, mode: str | None = None) -> IFNetConfig:
        d = dict(self.ifnet)
        if "n_branches" in d:
            raise ConfigError("ifnet.n_branches follows the partition count; do not set it")
        cfg = _from_dict(IFNetConfig, d, "ifnet")
        cfg = replace(cfg, n_branches=n, fusion_mode=mode or cfg.fusion_mode)
        cfg.validate()
        return cfg

    def train_config(self, stage: int, **overrides) -> TrainConfig:
        cfg = TrainConfig.from_dict(dict(self.stage1 if stage == 1 else self.stage2))
        if overrides:
            cfg = replace(cfg, **overrides)
            cfg.validate()
        return cfg


@dataclass
class Corpus:
    """Loaded dataset splits; homogeneous records can be re-binned for any n."""

    root: Path
    config: DatasetConfig
    records: dict[str, list[Record]]
    arrays: dict[str, tuple[np.ndarray, np.ndarray]]

    @classmethod
    def build(cls, cfg: DatasetConfig, root) -> "Corpus":
        root = Path(root)
        records = build_dataset(cfg, root)
        arrays = {split: load_pairs(rs, root) for split, rs in records.items()}
        return cls(root, cfg, records, arrays)

    def rebinned(self, split: str, n: int) -> list[Record]:
        bins = partition_bins(n, self.config.t_min, self.config.t_max)
        return [replace(r, bin_index=assign_bin(r.t_mean, bins)) for r in self.records[split]]

    def bin_arrays(self, split: str, n: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        mask = np.array([r.bin_index == j for r in self.rebinned(split, n)], dtype=bool)
        hazy, clean = self.arrays[split]
        return hazy[mask], clean[mask]

    def stage2_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        hz = [self.arrays[s][0] for s in ("train", "nonhomog_train") if len(self.records[s])]
        cl = [self.arrays[s][1] for s in ("train", "nonhomog_train") if len(self.records[s])]
        if not hz:
            raise ConfigError("stage 2 needs training records")
        return np.concatenate(hz), np.concatenate(cl)


def run_stage1(exp: ExperimentConfig, corpus: Corpus, n: int, out_dir=None,
               train_overrides: dict | None = None) -> list[TrainResult]:
    """Train one IENet per bin of an ``n``-way partition (branches in parallel threads)."""
    tcfg = exp.train_config(1, **(train_overrides or {}))
    default_extractor()  # build the shared extractor before threads start

    def one(j: int) -> TrainResult:
        hazy, clean = corpus.bin_arrays("train", n, j)
        if hazy.shape[0] == 0:
            raise ConfigError(f"stage 1: bin {j} of {n} has no training records")
        cfg = replace(tcfg, seed=derive_seed(tcfg.seed, n, j))
        return train_ienet(hazy, clean, cfg, exp.ienet_config(j, n), label=f"stage1 n={n} bin{j}")

    workers = max(1, min(n, threads_from_env()))
    if workers == 1:
        results = [one(j) for j in range(1, n + 1)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(1, n + 1)))
    if out_dir is not None:
        out_dir = Path(out_dir)
        for j, res in enumerate(results, 1):
            res.model.save(out_dir / "weights" / f"ienet_bin{j}.cpw")
            res.write_curve(out_dir / "curves" / f"stage1_bin{j}.tsv",
                            out_dir / "curves" / f"stage1_bin{j}_steps.tsv")
    return results


def run_stage2(exp: ExperimentConfig, corpus: Corpus, ienets, mode: str | None = None,
               out_dir=None, train_overrides: dict | None = None) -> TrainResult:
    hazy, clean = corpus.stage2_arrays()
    n = len(ienets)
    tcfg = exp.train_config(2, **(train_overrides or {}))
    tcfg = replace(tcfg, seed=derive_seed(tcfg.seed, n))
    res = train_ifnet(ienets, hazy, clean, tcfg, exp.ifnet_config(n, mode), label=f"stage2 n={n}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        res.model.save(out_dir / "weights" / "ifnet.cpw")
        res.write_curve(out_dir / "curves" / "stage2.tsv", out_dir / "curves" / "stage2_steps.tsv")
    return res


@dataclass
class PipelineEval:
    """Scores on the non-homogeneous test split."""

    fused: EvalReport
    branches: list[EvalReport]
    input_psnr: list[float]

    def summary(self) -> dict[str, float]:
        m = len(self.input_psnr)
        out = {"psnr_input": float(np.sum(self.input_psnr) / m) if m else float("nan")}
        for i, rep in enumerate(self.branches, 1):
            out[f"psnr_branch{i}"] = rep.means()["psnr"]
        means = self.fused.means()
        out["psnr_fused"] = means["psnr"]
        out["ssim_fused"] = means["ssim"]
        out["density_input"] = means["density_hazy"]
        out["density_fused"] = means["density_output"]
        out["density_drop_fraction"] = (
            float(np.mean([r.density_output < r.density_hazy for r in self.fused.rows]))
            if self.fused.rows else float("nan"))
        return out

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        self.fused.write(out_dir / "reports" / "eval_fused.tsv")
        for i, rep in enumerate(self.branches, 1):
            rep.write(out_dir / "reports" / f"eval_branch{i}.tsv")
        header = ["id", "psnr_input", *[f"psnr_branch{i}" for i in range(1, len(self.branches) + 1)],
                  "psnr_fused"]
        rows = []
        for k, row in enumerate(self.fused.rows):
            rows.append([row.id, self.input_psnr[k], *[b.rows[k].psnr for b in self.branches], row.psnr])
        s = self.summary()
        rows.append(["MEAN", s["psnr_input"], *[s[f"psnr_branch{i}"] for i in range(1, len(self.branches) + 1)],
                     s["psnr_fused"]])
        write_tsv(out_dir / "reports" / "fusion_vs_branch.tsv", header, rows)


def evaluate_pipeline(corpus: Corpus, ienets, ifnet: IFNet, split: str = "nonhomog_test") -> PipelineEval:
    records = corpus.records[split]
    if not records:
        raise ConfigError(f"split {split} is empty")
    hazy, clean = corpus.arrays[split]
    fused, branches = dehaze(ienets, ifnet, hazy)
    ids = [Path(r.hazy_path).stem for r in records]
    cleans, hazies = _hwc(clean), _hwc(hazy)
    return PipelineEval(
        fused=evaluate(ids, _hwc(fused), cleans, hazies),
        branches=[evaluate(ids, _hwc(b), cleans, hazies) for b in branches],
        input_psnr=[psnr(h, c) for h, c in zip(hazies, cleans)],
    )


@dataclass
class PipelineRun:
    n: int
    mode: str
    stage1: list[TrainResult]
    stage2: TrainResult
    cross: CrossEvalMatrix
    evaluation: PipelineEval

    @property
    def ienets(self) -> list[IENet]:
        return [r.model for r in self.stage1]

    @property
    def ifnet(self) -> IFNet:
        return self.stage2.model


def _stage(label: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (HazeforgeError, OSError) as exc:
        exc.args = (f"[{label}] {exc}",)
        raise


def run_pipeline(exp: ExperimentConfig, corpus: Corpus, n: int, mode: str | None = None,
                 out_dir=None, stage1: list[TrainResult] | None = None,
                 overrides: dict[int, dict] | None = None) -> PipelineRun:
    """Stage 1 (unless given), stage 2, cross-eval and evaluation for one setting.

    ``overrides`` maps a stage number to TrainConfig fields replacing the
    configured ones.
    """
    overrides = overrides or {}
    mode = mode or exp.ifnet_config(n).fusion_mode
    if stage1 is None:
        stage1 = _stage("stage1", run_stage1, exp, corpus, n, out_dir, overrides.get(1))
    elif out_dir is not None:
        for j, res in enumerate(stage1, 1):
            res.model.save(Path(out_dir) / "weights" / f"ienet_bin{j}.cpw")
            res.write_curve(Path(out_dir) / "curves" / f"stage1_bin{j}.tsv",
                            Path(out_dir) / "curves" / f"stage1_bin{j}_steps.tsv")
    ienets = [r.model for r in stage1]
    s2 = _stage("stage2", run_stage2, exp, corpus, ienets, mode, out_dir, overrides.get(2))
    cross = _stage("cross-eval", cross_eval, ienets, corpus.rebinned("test", n), corpus.root)
    ev = _stage("eval", evaluate_pipeline, corpus, ienets, s2.model)
    if out_dir is not None:
        cross.write(Path(out_dir) / "reports" / "cross_eval.tsv")
        ev.write(out_dir)
        summary = {"n": n, "fusion_mode": mode, **ev.summary(),
                   "cross_eval": cross.values.tolist()}
        (Path(out_dir) / "reports" / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return PipelineRun(n, mode, stage1, s2, cross, ev)


def run_experiment(config) -> dict[str, PipelineRun]:
    """Run the configured experiment or ablation; returns runs keyed by setting.

    All artifacts go under ``output_dir``: ``data/`` for the corpus and one
    subdirectory per setting with ``weights/``, ``curves/`` and ``reports/``.
    """
    if isinstance(config, ExperimentConfig):
        exp = config
    elif isinstance(config, dict):
        exp = ExperimentConfig.from_dict(config)
    else:
        exp = ExperimentConfig.load(config)
    out = Path(exp.output_dir)
    dcfg = exp.data_config()
    corpus = _stage("dataset", Corpus.build, dcfg, out / "data")
    n = dcfg.n_bins
    runs: dict[str, PipelineRun] = {}
    if exp.ablation == "none":
        runs["main"] = run_pipeline(exp, corpus, n, out_dir=out / "main")
    elif exp.ablation == "partitions":
        for k in exp.partitions:
            runs[f"n{k}"] = run_pipeline(exp, corpus, int(k), out_dir=out / f"n{k}")
    elif exp.ablation == "fusion":
        first = run_pipeline(exp, corpus, n, "stacking", out_dir=out / "stacking")
        runs["stacking"] = first
        runs["weighted"] = run_pipeline(exp, corpus, n, "weighted", out_dir=out / "weighted",
                                        stage1=first.stage1)
    else:
        runs["color_on"] = run_pipeline(exp, corpus, n, out_dir=out / "color_on")
        for stage in (1, 2):
            if exp.train_config(stage).weights().color == 0.0:
                raise ConfigError("color ablation needs a non-zero color weight in both stages")
        off = {s: {"loss_weights": {**exp.train_config(s).loss_weights, "color": 0.0}}
               for s in (1, 2)}
        runs["color_off"] = run_pipeline(exp, corpus, n, out_dir=out / "color_off", overrides=off)
    rows = [[name, run.n, run.mode, *[run.evaluation.summary()[k] for k in
             ("psnr_input", "psnr_fused", "ssim_fused", "density_fused")]]
            for name, run in runs.items()]
    write_tsv(out / "ablation.tsv", ["setting", "n", "fusion_mode", "psnr_input", "psnr_fused",
                                     "ssim_fused", "density_fused"], rows)
    (out / "config.json").write_text(json.dumps(asdict(exp), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return runs
