import csv
import json

import numpy as np
import pytest

from iceprune import checkpoint
from iceprune.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, cmd_pretrain, main
from iceprune.config import ConfigError, ExperimentConfig
from iceprune.data import Dataset, write_synthetic
from iceprune.netcore import evaluate
from iceprune.reports import read_steps, read_summary

BASE = {
    "seed": 1,
    "output_dir": "out",
    "data": {"format": "synthetic",
             "generate": {"classes": 3, "train_per_class": 60, "test_per_class": 20,
                          "shape": [2, 8, 8], "noise": 1.0}},
    "model": {"widths": [4, 5, 6, 5]},
    "pretrain": {"epochs": 3, "lr": 0.02, "batch_size": 32},
    "schedule": {"ratio": 0.5},
    "finetune": {"batch_size": 32},
    "hyper": {"theta": 0.05, "eta": 0.25},
    "space": {"axes": {"theta": [0.05], "eta": [0.25], "lr_base": [0.001], "delta": [0.0005],
                       "p": [0.3], "beta": [2.0]}},
    "subsample": {"fraction": 0.5},
}


def write_cfg(tmp_path, raw=None, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(BASE if raw is None else raw))
    return path


@pytest.fixture
def pretrained(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["pretrain", str(cfg)]) == EXIT_OK
    return cfg


def read_rows(path):
    return [r for r in csv.reader(l for l in path.read_text().splitlines() if not l.startswith("#"))]


# -- configuration ----------------------------------------------------------------

def test_schema_errors_exit_2(tmp_path, capsys):
    bad = {**BASE, "schedule": {"ratio": 1.5}}
    assert main(["pretrain", str(write_cfg(tmp_path, bad))]) == EXIT_CONFIG
    assert "schedule/ratio" in capsys.readouterr().err
    assert main(["pretrain", str(write_cfg(tmp_path, {**BASE, "colour": 1}))]) == EXIT_CONFIG
    assert main(["pretrain", str(tmp_path / "absent.json")]) == EXIT_CONFIG
    (tmp_path / "junk.json").write_text("{")
    assert main(["pretrain", str(tmp_path / "junk.json")]) == EXIT_CONFIG


def test_semantic_errors_are_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="delta"):
        ExperimentConfig.from_dict({**BASE, "hyper": {"delta": 0.01, "lr_base": 0.001}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"data": {"format": "synthetic"}})


def test_missing_dataset_is_a_config_error_before_training(tmp_path, capsys):
    raw = {**BASE, "data": {"format": "cifar10", "train": ["missing.bin"], "test": ["missing.bin"]}}
    assert main(["pretrain", str(write_cfg(tmp_path, raw))]) == EXIT_CONFIG
    assert "missing.bin" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_hash_ignores_output_location_and_mode():
    a = ExperimentConfig.from_dict(BASE)
    b = ExperimentConfig.from_dict({**BASE, "output_dir": "elsewhere", "mode": "baseline"})
    c = ExperimentConfig.from_dict({**BASE, "seed": 2})
    assert a.hash == b.hash != c.hash


def test_cli_overrides_reach_the_config(tmp_path):
    cfg = ExperimentConfig.load(write_cfg(tmp_path), {"hyper.lr_base": 0.01, "criterion.kind": "random"})
    assert cfg.hyper().lr.lr_base == 0.01 and cfg.criterion().kind == "random"


def test_custom_layer_list(tmp_path):
    layers = [{"kind": "conv2d", "out": 4}, {"kind": "relu"}, {"kind": "maxpool2d"},
              {"kind": "flatten"}, {"kind": "dense", "out": "classes", "prunable": False}]
    cfg = ExperimentConfig.from_dict({**BASE, "model": {"layers": layers}})
    net = cfg.build_model((2, 8, 8), 3)
    assert net.prunable_indices == [0] and net.num_classes == 3
    bad = ExperimentConfig.from_dict({**BASE, "model": {"layers": layers[:3] + layers[4:]}})
    with pytest.raises(ConfigError, match="flatten"):
        bad.build_model((2, 8, 8), 3)


# -- pretrain -----------------------------------------------------------------------

def test_pretrain_separates_two_linear_classes(tmp_path):
    rng = np.random.default_rng(0)
    y = np.arange(400) % 2
    direction = rng.standard_normal((1, 6, 6))
    x = (np.where(y == 1, 1.0, -1.0)[:, None, None, None] * direction
         + 0.3 * rng.standard_normal((400, 1, 6, 6))).astype(np.float32)
    write_synthetic(Dataset(x[:300], y[:300], 2), tmp_path / "train.iced")
    write_synthetic(Dataset(x[300:], y[300:], 2), tmp_path / "test.iced")
    raw = {"seed": 0, "output_dir": "out",
           "data": {"format": "synthetic", "train": ["train.iced"], "test": ["test.iced"]},
           "model": {"layers": [{"kind": "flatten"}, {"kind": "dense", "out": 8}, {"kind": "relu"},
                                {"kind": "dense", "out": "classes", "prunable": False}]},
           "pretrain": {"epochs": 5, "lr": 0.01, "batch_size": 32}}
    cfg = ExperimentConfig.load(write_cfg(tmp_path, raw))
    net = checkpoint.load(cmd_pretrain(cfg))
    train, _ = cfg.datasets()
    assert evaluate(net, train) >= 0.95


def test_pretrain_checkpoint_is_bit_identical_across_runs(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["pretrain", str(cfg)]) == EXIT_OK
    first = next((tmp_path / "out").glob("pretrained_*.icep")).read_bytes()
    assert main(["pretrain", str(cfg), "--output-dir", "out2"]) == EXIT_OK
    assert next((tmp_path / "out2").glob("pretrained_*.icep")).read_bytes() == first


def test_prune_without_checkpoint_is_a_config_error(tmp_path, capsys):
    assert main(["prune", str(write_cfg(tmp_path))]) == EXIT_CONFIG
    assert "pretrain" in capsys.readouterr().err


def test_checkpoint_mismatch_is_a_runtime_error(pretrained, tmp_path):
    raw = json.loads(pretrained.read_text())
    raw["data"]["generate"]["classes"] = 4
    raw["checkpoint"] = str(next((tmp_path / "out").glob("pretrained_*.icep")))
    assert main(["prune", str(write_cfg(tmp_path, raw, "other.json"))]) == EXIT_RUNTIME


# -- prune / compare / report ---------------------------------------------------------

def test_baseline_and_ice_reports_share_the_config_hash(pretrained, tmp_path, capsys):
    assert main(["prune", str(pretrained), "--mode", "baseline"]) == EXIT_OK
    assert main(["prune", str(pretrained), "--mode", "ice"]) == EXIT_OK
    out = tmp_path / "out"
    base = read_summary(next(out.glob("baseline_*.json")))
    ice = read_summary(next(out.glob("ice_*[0-9a-f].json")))
    assert base["config_hash"] == ice["config_hash"]
    assert (out / f"ice_{ice['config_hash']}.trials.csv").exists()
    assert checkpoint.load(out / f"ice_{ice['config_hash']}.pruned.icep").masks[0].sum() == 2
    _, steps = read_steps(out / base["files"]["steps"])
    assert len(steps) == 4  # one row per schedule step
    capsys.readouterr()
    assert main(["compare", str(out / f"baseline_{base['config_hash']}.json"),
                 str(out / f"ice_{ice['config_hash']}.json"), "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "comparison.csv")
    assert len(rows) == 3 and rows[1][0] == "baseline" and float(rows[1][4]) == 1.0
    assert float(rows[2][4]) == pytest.approx(base["total_seconds"] / ice["total_seconds"])
    assert main(["report", str(out / f"ice_{ice['config_hash']}.json")]) == EXIT_OK
    assert "pipeline ice" in capsys.readouterr().out


def test_rerun_reproduces_report_bytes(pretrained, tmp_path):
    for mode in ("baseline", "ice", "pft"):
        for d in ("r1", "r2"):
            ckpt = str(next((tmp_path / "out").glob("pretrained_*.icep")))
            raw = {**json.loads(pretrained.read_text()), "checkpoint": ckpt}
            assert main(["prune", str(write_cfg(tmp_path, raw, "again.json")), "--mode", mode,
                         "--output-dir", d]) == EXIT_OK
        for suffix in (".steps.csv", ".freeze.csv", ".pruned.icep"):
            a = next((tmp_path / "r1").glob(f"{mode}_*{suffix}")).read_bytes()
            b = next((tmp_path / "r2").glob(f"{mode}_*{suffix}")).read_bytes()
            assert a == b, (mode, suffix)


def test_compare_missing_report_exits_3(tmp_path, capsys):
    assert main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == EXIT_RUNTIME
    assert "a.json" in capsys.readouterr().err


def test_autotune_dumps_trials(pretrained, tmp_path):
    assert main(["autotune", str(pretrained)]) == EXIT_OK
    trials = next((tmp_path / "out").glob("autotune_*.trials.csv"))
    rows = read_rows(trials)
    assert rows[0][:6] == ["theta", "eta", "lr_base", "delta", "p", "beta"] and len(rows) == 2
    assert trials.read_text().startswith("# config_hash=")


def test_ablate_table_layout(pretrained, tmp_path):
    assert main(["ablate", str(pretrained)]) == EXIT_OK
    table = next((tmp_path / "out").glob("ablation_*.csv"))
    rows = read_rows(table)
    assert rows[0] == ["variant", "threshold", "freezing", "scheduler", "accuracy", "time_seconds",
                       "fine_tunes", "triggered"]
    assert [r[:4] for r in rows[1:]] == [["full", "1", "1", "1"], ["no_threshold", "0", "1", "1"],
                                         ["no_freezing", "1", "0", "1"], ["no_scheduler", "1", "1", "0"]]
    assert rows[2][7] == "4"  # gate disabled: every step triggers
    seeds = {read_summary(p)["master_seed"] for p in (tmp_path / "out").glob("ablate-*.json")}
    assert seeds == {1}
