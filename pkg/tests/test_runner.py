import csv
import json

import numpy as np
import pytest

from hda import runner
from hda.diagnostics import MetricsRecord
from hda.runner import ConfigError, config_from_dict, load_config, run_experiment, sweep_m


def small(**over):
    d = {"task": {"n_per_domain": 60}, "optim": {"epochs": 2, "batch_size": 16}, "model": {"hidden": 8}}
    for k, v in over.items():
        if isinstance(v, dict):
            d.setdefault(k, {}).update(v)
        else:
            d[k] = v
    return config_from_dict(d)


def test_bundled_configs_load_and_validate():
    for name in runner.BUNDLED_CONFIGS:
        cfg = load_config(name)
        assert cfg.optim.batch_size == 64 and cfg.optim.epochs == 100
    assert load_config("default.json").task.generator == "blobs"
    assert load_config("moons").task.rotation_deg == 40.0
    assert load_config("msda").task.num_sources == 3
    assert load_config("ssda3").task.shots == 3


def test_missing_config_path():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.json")


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"model": {"hiden": 3}},
    {"optim": {"lr": 0.1, "lr_decay": 0.5}},
    {"task": {"shift": 2}},
])
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict(data)


@pytest.mark.parametrize("data", [
    {"model": {"M": 0}}, {"optim": {"epochs": 0}}, {"optim": {"batch_size": 1}},
    {"optim": {"lr": 0.0}}, {"method": "mcd"}, {"model": {"heuristic_loss_norm": "l3"}},
    {"task": {"mode": "ssda", "shots": 2}},
])
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigError if "task" not in data else ValueError):
        config_from_dict(data)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_config_round_trip():
    cfg = load_config("moons")
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_run_writes_metrics_and_summary(tmp_path):
    s = run_experiment(small(), output_dir=tmp_path)
    assert s.status == "ok"
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert rows[0] == MetricsRecord.columns(3)
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
    summary = json.loads((tmp_path / "summary.json").read_text())
    for key in ("final_target_acc", "best_target_acc", "final_metrics", "wall_clock_seconds",
                "config", "code_version", "status"):
        assert key in summary
    assert 0 <= summary["final_target_acc"] <= 1
    assert summary["config"]["optim"]["epochs"] == 2


def test_eval_only_has_single_row(tmp_path):
    s = run_experiment(small(), output_dir=tmp_path, eval_only=True)
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2 and rows[1][0] == "0"
    assert s.steps == 0


def test_default_output_root_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("HDA_OUT_DIR", str(tmp_path / "root"))
    run_experiment(small(seed=3), eval_only=True)
    assert (tmp_path / "root" / "hdan_seed3" / "summary.json").exists()


def test_determinism_bitwise(tmp_path):
    run_experiment(small(seed=4), output_dir=tmp_path / "a")
    run_experiment(small(seed=4), output_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_decomposition_residual_tracked():
    s = run_experiment(small(), write_files=False)
    assert 0 <= s.max_decomposition_residual < 1e-12
    assert -1 <= s.init_cos_gh <= -0.99


def test_methods_share_data_order_and_init(monkeypatch):
    seen = {}
    real = runner.compute_losses

    def spy(model, cfg, groups, idx, lam):
        seen.setdefault(cfg.method, []).append([i.copy() for i in idx])
        return real(model, cfg, groups, idx, lam)

    monkeypatch.setattr(runner, "compute_losses", spy)
    for method in runner.METHODS:
        run_experiment(small(method=method, seed=2), write_files=False)
    ref = seen["hdan"]
    for method in ("source_only", "dann_baseline"):
        assert len(seen[method]) == len(ref)
        for a, b in zip(seen[method], ref):
            assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_source_only_drops_transfer_and_heuristic_losses():
    s = run_experiment(small(method="source_only"), write_files=False)
    assert all(r.l_trans == 0.0 and r.l_h == 0.0 for r in s.records)


def test_dann_baseline_has_no_heuristic_output():
    s = run_experiment(small(method="dann_baseline"), write_files=False)
    assert all(r.l_h == 0.0 and r.extra["mean_abs_h"] == 0.0 for r in s.records)
    assert all(r.l_trans > 0 for r in s.records)


@pytest.mark.parametrize("task", [
    {"mode": "msda", "num_sources": 3}, {"mode": "ssda", "shots": 1}, {"generator": "moons", "num_classes": 2},
])
def test_modes_run(task):
    s = run_experiment(small(task=task), write_files=False)
    assert s.status == "ok"


def test_optional_losses_run():
    s = run_experiment(small(model={"independence_loss": True, "entropy_conditioning": True,
                                    "heuristic_loss_norm": "l2"}), write_files=False)
    assert s.status == "ok"


def test_numerical_failure_still_writes_summary(tmp_path, monkeypatch):
    real = runner.compute_losses
    calls = {"n": 0}

    def poisoned(model, cfg, groups, idx, lam):
        bundle, fw = real(model, cfg, groups, idx, lam)
        if lam > 0:  # training steps only; full-data snapshots use lam 0
            calls["n"] += 1
            if calls["n"] == 3:
                bundle.l_f = bundle.l_f * float("nan")
        return bundle, fw

    monkeypatch.setattr(runner, "compute_losses", poisoned)
    s = run_experiment(small(), output_dir=tmp_path)
    assert s.status.startswith("failed") and "non-finite" in s.status
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == s.status
    assert summary["bound_terms"] is None
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2  # header plus the epoch-0 row


def test_summary_identical_apart_from_wall_clock(tmp_path):
    run_experiment(small(seed=7), output_dir=tmp_path / "a")
    run_experiment(small(seed=7), output_dir=tmp_path / "b")
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    a.pop("wall_clock_seconds"), b.pop("wall_clock_seconds")
    assert a == b


def test_sweep_table(tmp_path):
    table = sweep_m(small(), [1, 2], seeds=[0, 1], output_dir=tmp_path)
    assert [r["M"] for r in table] == [1, 2]
    for r in table:
        assert 0 <= r["mean_target_acc"] <= 1 and r["std_target_acc"] >= 0 and r["n_seeds"] == 2
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert rows[0] == ["M", "mean_target_acc", "std_target_acc", "n_seeds"] and len(rows) == 3
    assert (tmp_path / "M2" / "seed1" / "metrics.csv").exists()


def test_sweep_single_m_default_seeds(tmp_path):
    table = sweep_m(small(optim={"epochs": 1}), [3], output_dir=tmp_path)
    assert len(table) == 1 and table[0]["n_seeds"] == 3


def test_sweep_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        sweep_m(small(), [], output_dir=tmp_path)
