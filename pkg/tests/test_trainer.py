import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hazeforge.engine import Tensor, no_grad
from hazeforge.errors import ConfigError, ContractError, TrainingError
from hazeforge.haze import asm
from hazeforge.haze.generate import gen_clean_image
from hazeforge.io import Record
from hazeforge.models import IENet, IENetConfig, IFNetConfig
from hazeforge.trainer import (CrossEvalMatrix, ExperimentConfig, TrainConfig, _fit, cross_eval,
                               derive_seed, lr_schedule, run_experiment, threads_from_env,
                               train_ienet, train_ifnet)

# frozen from a pilot run that reached 19% of the epoch-0 loss
TOY_LOSS_RATIO = 0.5
IDENTITY_TOL = 0.05


def toy_pairs(n, size, seed0, t=(0.3, 0.6)):
    r = np.random.default_rng(seed0)
    hazy, clean = [], []
    for i in range(n):
        c = gen_clean_image(size, size, seed0 + i)
        field = asm.make_homogeneous_field(size, size, r.uniform(*t))
        hazy.append(asm.synthesize(c, 0.9, field).transpose(2, 0, 1))
        clean.append(c.transpose(2, 0, 1))
    return np.ascontiguousarray(hazy), np.ascontiguousarray(clean)


@pytest.fixture(scope="module")
def toy_run():
    hazy, clean = toy_pairs(20, 16, 100)
    return hazy, clean, train_ienet(hazy, clean, TrainConfig(epochs=30, seed=1), IENetConfig(seed=2))


def test_lr_schedule_examples():
    cfg = TrainConfig()
    assert [lr_schedule(e, cfg) for e in range(10)] == [1e-3] * 10
    assert lr_schedule(10, cfg) == 5e-4
    assert lr_schedule(25, cfg) == 2.5e-4
    with pytest.raises(ConfigError):
        lr_schedule(-1, cfg)


@given(st.integers(0, 500), st.integers(1, 50))
def test_lr_schedule_non_increasing(epoch, every):
    cfg = TrainConfig(lr_halve_every=every)
    assert lr_schedule(epoch + 1, cfg) <= lr_schedule(epoch, cfg)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 3, "learning_rate": 0.1})
    for bad in ({"epochs": 0}, {"batch_size": 0}, {"lr0": 0.0}, {"beta1": 1.0}):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"loss_weights": {"l1": 1.0, "tv": 1.0}})


def test_toy_training_halves_loss(toy_run):
    _, _, res = toy_run
    assert len(res.curve) == 30
    assert res.curve[-1]["total"] < TOY_LOSS_RATIO * res.curve[0]["total"]
    assert res.improved
    assert len(res.steps) == 30 * 3  # 20 samples, batch 8, short batch kept


def test_training_is_deterministic(toy_run):
    hazy, clean, _ = toy_run
    a = train_ienet(hazy[:8], clean[:8], TrainConfig(epochs=2, seed=4), IENetConfig(seed=5))
    b = train_ienet(hazy[:8], clean[:8], TrainConfig(epochs=2, seed=4), IENetConfig(seed=5))
    assert a.model.digest() == b.model.digest()
    assert a.curve == b.curve


def test_every_sample_once_per_epoch():
    seen = []
    net = IENet(IENetConfig(seed=0))
    x = np.random.default_rng(0).uniform(0.1, 0.9, (11, 3, 16, 16))

    def forward(idx):
        seen.append(list(idx))
        return net(Tensor(x[idx]))[1]

    _fit(net, forward, x, TrainConfig(epochs=3, batch_size=4, seed=9), "probe")
    assert [len(b) for b in seen] == [4, 4, 3] * 3
    epochs = [sorted(sum(seen[i:i + 3], [])) for i in range(0, 9, 3)]
    assert all(e == list(range(11)) for e in epochs)
    assert sum(seen[0:3], []) != sum(seen[3:6], [])


def test_identity_task_learns_unit_coefficient():
    _, clean = toy_pairs(40, 32, 500)
    res = train_ienet(clean, clean, TrainConfig(epochs=30, seed=1), IENetConfig(seed=2))
    _, held = toy_pairs(20, 32, 900)
    with no_grad():
        J = res.model(Tensor(held))[1].data
    assert np.abs(J - held).mean() < IDENTITY_TOL


def test_train_ienet_rejects_bad_subsets():
    empty = np.zeros((0, 3, 16, 16))
    with pytest.raises(ConfigError, match="empty"):
        train_ienet(empty, empty, TrainConfig(epochs=1))
    x = np.full((2, 3, 16, 16), 0.5)
    with pytest.raises(ConfigError, match="several bins"):
        train_ienet(x, x, TrainConfig(epochs=1), bin_indices=[1, 2])


def test_non_finite_loss_aborts_with_step():
    x = np.full((4, 3, 16, 16), 0.5)
    bad = x.copy()
    bad[3, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError) as info:
        train_ienet(bad, x, TrainConfig(epochs=1, batch_size=2, seed=0))
    assert info.value.step in (0, 1)
    assert f"step {info.value.step}" in str(info.value)


def test_stage2_keeps_ienets_frozen_and_learns(toy_run):
    hazy, clean, res = toy_run
    other = train_ienet(hazy, clean, TrainConfig(epochs=2, seed=3), IENetConfig(seed=4)).model
    ienets = [res.model, other]
    before = [n.digest() for n in ienets]
    s2 = train_ifnet(ienets, hazy, clean, TrainConfig(epochs=10, seed=5), IFNetConfig(2, seed=6))
    assert [n.digest() for n in ienets] == before
    assert s2.curve[-1]["total"] < s2.curve[0]["total"]


def test_stage2_single_branch(toy_run):
    hazy, clean, res = toy_run
    s2 = train_ifnet([res.model], hazy[:6], clean[:6], TrainConfig(epochs=1, seed=0))
    assert s2.model.config.n_branches == 1
    with no_grad():
        out = s2.model([Tensor(hazy[:2])])
    assert out.shape == (2, 3, 16, 16)


def test_stage2_argument_checks(toy_run):
    hazy, clean, res = toy_run
    with pytest.raises(ConfigError):
        train_ifnet([], hazy, clean, TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train_ifnet([res.model], hazy, clean, TrainConfig(epochs=1), IFNetConfig(2))


def test_cross_eval_matrix_contract(tmp_path):
    m = CrossEvalMatrix([[20.0, 18.0], [17.0, 22.0]])
    assert m.n == 2 and m.diagonal_dominant_rows() == [True, True]
    assert CrossEvalMatrix([[1.0, 2.0], [0.0, 3.0]]).diagonal_dominant_rows() == [False, True]
    with pytest.raises(ContractError):
        CrossEvalMatrix([[1.0, 2.0]])
    with pytest.raises(ContractError):
        CrossEvalMatrix([[math.inf]])
    m.write(tmp_path / "c.tsv")
    assert (tmp_path / "c.tsv").read_text().splitlines()[0] == "#model\tbin1\tbin2"


def test_cross_eval_needs_every_bin():
    recs = [Record("h.ppm", "c.ppm", 1, 0.4, 0)]
    with pytest.raises(ConfigError, match=r"bins \[2\]"):
        cross_eval([IENet(), IENet()], recs, ".")


def test_threads_from_env(monkeypatch):
    monkeypatch.setenv("HAZEFORGE_THREADS", "3")
    assert threads_from_env() == 3
    for bad in ("0", "-2", "many"):
        monkeypatch.setenv("HAZEFORGE_THREADS", bad)
        with pytest.raises(ConfigError):
            threads_from_env()


def test_derive_seed_separates_streams():
    assert derive_seed(0, 2, 1) == derive_seed(0, 2, 1)
    assert len({derive_seed(0, n, j) for n in (1, 2, 3) for j in (1, 2, 3)}) == 9


def test_experiment_config_checks(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"output_dir": "x", "stage3": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"output_dir": "x", "ifnet": {"n_branches": 2}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"output_dir": "x", "ablation": "depth"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"output_dir": "x", "dataset": {"bins": 2}})
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


TINY = {
    "dataset": {"train_per_bin": 4, "test_per_bin": 2, "nonhomog_train": 4,
                "nonhomog_test": 3, "image_size": 16},
    "stage1": {"epochs": 1, "batch_size": 4},
    "stage2": {"epochs": 1, "batch_size": 4},
}


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "config.json"}


def test_run_experiment_artifacts_and_determinism(tmp_path):
    runs_a = run_experiment({**TINY, "output_dir": str(tmp_path / "a"), "ablation": "fusion"})
    run_experiment({**TINY, "output_dir": str(tmp_path / "b"), "ablation": "fusion"})
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    for setting in ("stacking", "weighted"):
        for name in ("weights/ienet_bin1.cpw", "weights/ienet_bin2.cpw", "weights/ifnet.cpw",
                     "curves/stage1_bin1.tsv", "curves/stage1_bin1_steps.tsv", "curves/stage2.tsv",
                     "reports/cross_eval.tsv", "reports/eval_fused.tsv", "reports/eval_branch2.tsv",
                     "reports/fusion_vs_branch.tsv", "reports/summary.json"):
            assert f"{setting}/{name}" in a
    # weighted reuses stage 1 and differs only in the fusion head
    assert a["stacking/weights/ienet_bin1.cpw"] == a["weighted/weights/ienet_bin1.cpw"]
    header = a["stacking/reports/fusion_vs_branch.tsv"].decode().splitlines()[0]
    assert header == "#id\tpsnr_input\tpsnr_branch1\tpsnr_branch2\tpsnr_fused"
    summary = json.loads(a["weighted/reports/summary.json"])
    assert summary["fusion_mode"] == "weighted" and summary["n"] == 2
    assert set(runs_a) == {"stacking", "weighted"}
    assert (tmp_path / "a" / "ablation.tsv").read_text().count("\n") == 3


def test_run_experiment_partitions(tmp_path):
    cfg = {**TINY, "output_dir": str(tmp_path), "ablation": "partitions", "partitions": [1, 2]}
    runs = run_experiment(cfg)
    assert runs["n1"].cross.n == 1 and runs["n2"].cross.n == 2
    assert "psnr_branch2" not in runs["n1"].evaluation.summary()


def test_run_experiment_labels_failing_stage(tmp_path):
    cfg = {**TINY, "output_dir": str(tmp_path), "ablation": "partitions", "partitions": [5],
           "dataset": {**TINY["dataset"], "train_per_bin": 1}}
    with pytest.raises(ConfigError, match=r"^\[stage1\]"):
        run_experiment(cfg)
