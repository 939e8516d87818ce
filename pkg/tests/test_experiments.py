import json
import logging

import numpy as np
import pytest

from homossl import autodiff as ad
from homossl.experiments import (
    METRIC_COLUMNS,
    SWEEP_COLUMNS,
    ConfigError,
    ExperimentConfig,
    TrainingDivergedError,
    build_data,
    build_model,
    emulated_fibers,
    linear_probe,
    load_checkpoint,
    read_metrics,
    run_frozen_baseline,
    run_many,
    run_nonequivariant_control,
    run_supervised_baseline,
    sweep_base_size,
    sweep_config,
    sweep_topo_distance,
    train,
)

SMALL = {"data": {"num_per_class": 32, "test_per_class": 32}, "optim": {"epochs": 2}}


def small(tmp_path, **changes):
    return ExperimentConfig(out=str(tmp_path)).replace(**SMALL).replace(**changes)


# --- config ---------------------------------------------------------------------------

def test_config_json_round_trip():
    cfg = ExperimentConfig().replace(loss="assl", sample={"base_size": 2})
    again = ExperimentConfig.from_json(json.dumps(cfg.to_dict()))
    assert again == cfg and again.run_hash == cfg.run_hash


def test_unknown_keys_are_errors():
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="config.optim"):
        ExperimentConfig.from_dict({"optim": {"learning_rate": 0.1}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"loss": "byol"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"precision": "f16"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"backbone": {"family": "so3"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"data": {"kind": "mnist"}})


def test_hash_ignores_output_path_only():
    a = ExperimentConfig(out="x")
    assert a.run_hash == ExperimentConfig(out="y").run_hash
    assert a.run_hash != a.replace(seed=2).run_hash
    assert a.run_dir.endswith(f"run-{a.run_hash}")


def test_partial_config_fills_defaults():
    cfg = ExperimentConfig.from_dict({"backbone": {"grid": 8}})
    assert cfg.backbone.family == ExperimentConfig().backbone.family and cfg.backbone.grid == 8


# --- probe ----------------------------------------------------------------------------

def test_probe_separable_clusters():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 100)
    X = rng.normal(size=(200, 3)) + 5 * y[:, None]
    assert linear_probe(X, y) == 1.0


def test_probe_shuffled_labels_is_chance():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2048, 8))
    y = rng.permutation(np.repeat([0, 1], 1024))
    acc = linear_probe(X[:1024], y[:1024], X[1024:], y[1024:])
    assert abs(acc - 0.5) <= 0.1


def test_probe_tie_breaks_to_lowest_class():
    X = np.zeros((4, 2))
    assert linear_probe(X, np.array([0, 1, 0, 1]), X, np.array([0, 0, 0, 0])) == 1.0


def test_probe_rejects_single_class():
    with pytest.raises(ValueError):
        linear_probe(np.ones((4, 2)), np.zeros(4, dtype=int))


# --- training -------------------------------------------------------------------------

def test_zero_epochs_keeps_initialization(tmp_path):
    cfg = small(tmp_path, optim={"epochs": 0})
    res = train(cfg)
    assert [m.epoch for m in read_metrics(f"{res.out_dir}/metrics.csv")] == [0]
    with ad.precision(cfg.precision):
        init = build_model(cfg)
        loaded = load_checkpoint(res.out_dir, build_model(cfg.replace(seed=99)))
    for (n1, a), (n2, b) in zip(init.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes()


def test_hssl_loss_decreases_on_default_task(tmp_path):
    res = train(ExperimentConfig(out=str(tmp_path)), write=False)
    by_epoch = {m.epoch: m.loss_value for m in res.metrics}
    assert by_epoch[20] < by_epoch[0]


def test_matched_sample_assl_hssl_step_losses(tmp_path):
    cfg = small(tmp_path, data={"num_per_class": 128}, optim={"epochs": 3})
    data = build_data(cfg)
    a = train(cfg.replace(loss="assl"), data, write=False).step_losses[:10]
    h = train(cfg.replace(loss="hssl"), data, write=False).step_losses[:10]
    assert len(a) == 10
    assert max(abs(x - y) for x, y in zip(a, h)) <= 1e-6


def test_unmatched_mode_uses_separate_streams(tmp_path):
    cfg = small(tmp_path, matched_samples=False, optim={"epochs": 1})
    data = build_data(cfg)
    a = train(cfg.replace(loss="assl"), data, write=False).step_losses
    h = train(cfg.replace(loss="hssl"), data, write=False).step_losses
    assert a != h


def test_metrics_csv_byte_identical_on_repeat(tmp_path):
    cfg_a = small(tmp_path / "a")
    cfg_b = small(tmp_path / "b")
    pa, pb = train(cfg_a).out_dir, train(cfg_b).out_dir
    text = open(f"{pa}/metrics.csv", "rb").read()
    assert text == open(f"{pb}/metrics.csv", "rb").read()
    assert text.splitlines()[0].decode() == ",".join(METRIC_COLUMNS)
    assert b"\r" not in text


def test_run_directory_contents(tmp_path):
    cfg = small(tmp_path, log_samples=True)
    out = train(cfg).out_dir
    for name in ("config.json", "metrics.csv", "steps.csv", "manifest.json", "samples.csv"):
        assert (tmp_path / f"run-{cfg.run_hash}" / name).exists()
    assert ExperimentConfig.load(f"{out}/config.json").run_hash == cfg.run_hash
    manifest = json.load(open(f"{out}/manifest.json"))
    assert manifest["format"] == "homossl-checkpoint-1"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_dump(tmp_path):
    cfg = small(tmp_path, optim={"lr": 1e30, "epochs": 3})
    with pytest.raises(TrainingDivergedError) as err:
        train(cfg)
    dump = err.value.dump_dir
    assert (tmp_path / dump.split("/")[-2] / dump.split("/")[-1] / "batch.json").exists()
    info = json.load(open(f"{dump}/batch.json"))
    assert len(info["examples"]) == cfg.optim.batch_size


def test_every_loss_trains(tmp_path):
    for loss in ("assl", "fsim", "supervised"):
        fam = {"family": "translation", "grid": 4, "lift_kernel_size": 4} if loss == "fsim" else {}
        res = train(small(tmp_path, loss=loss, backbone=fam, data={"period": None}
                          if fam else {}), write=False)
        assert all(np.isfinite(res.step_losses)) and 0.0 <= res.accuracy <= 1.0


def test_baselines_and_control(tmp_path):
    cfg = ExperimentConfig(out=str(tmp_path))
    data = build_data(cfg)
    frozen = run_frozen_baseline(cfg, data, write=False)
    assert frozen == run_frozen_baseline(cfg, data, write=False)
    assert frozen >= 0.5
    assert run_supervised_baseline(cfg, data, write=False) >= frozen
    ctrl = train(cfg.replace(backbone={"equivariant": False}), data, write=False)
    assert ctrl.metrics[-1].loss_value < ctrl.metrics[0].loss_value
    assert 0.0 <= run_nonequivariant_control(cfg, data, write=False) <= 1.0


def test_emulated_fibers_partition():
    flat = np.arange(2 * 3 * 4).reshape(2, 12)
    fib = emulated_fibers(flat, 3, 4)
    assert fib.shape == (2, 3, 4)
    assert sorted(fib.reshape(-1).tolist()) == list(range(24))
    with pytest.raises(ad.ShapeError):
        emulated_fibers(flat, 5, 4)


# --- sweeps ---------------------------------------------------------------------------

def test_singleton_sweep(tmp_path):
    rows = sweep_base_size(small(tmp_path), [2])
    assert len(rows) == 1 and rows[0]["pct_change_vs_first"] == 0.0
    path = next(tmp_path.glob("sweep-base_size-*.csv"))
    assert path.read_text().splitlines()[0] == ",".join(SWEEP_COLUMNS)


def test_infeasible_sweep_point_skipped(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        rows = sweep_base_size(small(tmp_path, optim={"epochs": 1}), [1, 4], write=False)
    assert [r["setting"] for r in rows] == [1]
    assert "skipping base_size=4" in caplog.text


def test_distance_sweep_rejects_negative(tmp_path):
    with pytest.raises(ValueError):
        sweep_topo_distance(small(tmp_path), [1, -1])


def test_distance_zero_point_uses_equal_views(tmp_path):
    cfg = small(tmp_path, sample={"max_topo_distance": 0.0}, log_samples=True,
                optim={"epochs": 1})
    out = train(cfg).out_dir
    lines = open(f"{out}/samples.csv").read().splitlines()[1:]
    assert lines and all(l.split(",")[2] == l.split(",")[3] for l in lines)


def test_sweep_config_group_is_large_enough():
    cfg = sweep_config()
    assert cfg.backbone.family == "translation" and cfg.backbone.grid ** 2 - 1 >= 4


def test_parallel_fan_out_matches_serial(tmp_path, monkeypatch):
    cfgs = [small(tmp_path / "s", seed=s, optim={"epochs": 1}) for s in (1, 2)]
    serial = run_many(cfgs)
    monkeypatch.setenv("HOMOSSL_THREADS", "2")
    cfgs = [c.replace(out=str(tmp_path / "p")) for c in cfgs]
    assert run_many(cfgs) == serial
