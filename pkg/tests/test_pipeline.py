import dataclasses
import filecmp
import json
import os

import numpy as np
import pytest

from mboflow import __version__
from mboflow.cli import INCOMPLETE_MARKER, main
from mboflow.config import ConfigError, PipelineConfig, config_from_dict, default_config_dict, load_config
from mboflow.pipeline import discover_tasks, process_day, run_pipeline, synthetic_results
from mboflow.synth import lobster_paths

SMALL = {
    "data_root": "data",
    "output_dir": "out",
    "stocks": [{"symbol": "AAA", "group": "small"}, "BBB"],
    "synth": {"n_train_days": 6, "n_test_days": 6, "kappa": 1.0},
}


@pytest.fixture(scope="module")
def universe(tmp_path_factory):
    """A small synthetic universe written to disk once, plus its config path."""
    root = tmp_path_factory.mktemp("universe")
    path = root / "cfg.json"
    path.write_text(json.dumps(SMALL))
    assert main(["synth", "--config", str(path)]) == 0
    return root, path


def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def same_tree(a, b):
    files = _tree(a)
    assert files == _tree(b)
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors


def test_config_defaults_and_validation(tmp_path):
    d = default_config_dict()
    assert d["window"] == 100 and d["K"] == 3 and d["sigma_target"] == 0.15 and d["annualization"] == 252
    assert d["train"] == {"start": "2021-01-01", "end": "2021-06-30"}
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"start": "2021-01-01", "end": "2021-08-01"}})
    with pytest.raises(ConfigError):
        config_from_dict({"stocks": ["A", "A"]})
    with pytest.raises(ConfigError):
        config_from_dict({"event_scopes": ["bid"]})
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data_root": "d", "stocks": ["X"]}))
    cfg = load_config(p)
    assert cfg.data_root == os.path.join(str(tmp_path), "d")


def test_config_hash_ignores_scheduling():
    cfg = PipelineConfig()
    assert cfg.config_hash() == dataclasses.replace(cfg, workers=4, output_dir="elsewhere").config_hash()
    assert cfg.config_hash() != dataclasses.replace(cfg, seed=1).config_hash()


def test_all_writes_every_artifact(universe):
    root, path = universe
    assert main(["all", "--config", str(path)]) == 0
    out = root / "out"
    assert not (out / INCOMPLETE_MARKER).exists()
    names = _tree(out)
    for need in ("models/AAA.json", "roles/role_map.json", "signals/ofi.csv", "signals/returns.csv",
                 "backtest/summary.json", "backtest/FRNB_all.json", "backtest/train_sharpe.csv", "run_report.json"):
        assert need in names
    assert sum(n.startswith("features/AAA/") for n in names) == 12
    cfg = load_config(path)
    header = f"# mboflow {__version__} config {cfg.config_hash()}"
    for n in names:
        text = (out / n).read_text()
        if n.endswith(".csv"):
            assert text.splitlines()[0] == header
        else:
            doc = json.loads(text)
            assert doc["meta"] == {"mboflow_version": __version__, "config_hash": cfg.config_hash()}
    feat = (out / "features/AAA/AAA_2021-01-01_features.csv").read_text().splitlines()[1]
    assert feat.startswith("event_index,time,event_type,side,price,V,T_m,T_1,T_prev,SBS,OBS,z_V")
    best = json.loads((out / "backtest/FRNB_all.json").read_text())
    assert best["best_beats_benchmarks"] is True
    roles = json.loads((out / "roles/role_map.json").read_text())
    assert set(roles["roles"].values()) == {"Directional", "Opportunistic", "MarketMaking"}


def test_rerun_and_workers_are_byte_identical(universe):
    root, path = universe
    assert main(["all", "--config", str(path), "--out", str(root / "r1")]) == 0
    assert main(["all", "--config", str(path), "--out", str(root / "r2")]) == 0
    assert main(["all", "--config", str(path), "--out", str(root / "r3"), "--workers", "2"]) == 0
    assert same_tree(root / "r1", root / "r2")
    assert same_tree(root / "r1", root / "r3")


def test_cluster_twice_same_models(universe):
    root, path = universe
    for d in ("c1", "c2"):
        assert main(["cluster", "--config", str(path), "--out", str(root / d), "--seed", "5"]) == 0
    assert same_tree(root / "c1" / "models", root / "c2" / "models")
    assert not (root / "c1" / "signals").exists()


def test_environment_overrides(universe):
    root, path = universe
    env = {"MBOFLOW_CONFIG": str(path), "MBOFLOW_STAGE": "features", "MBOFLOW_OUT": str(root / "envout")}
    assert main([], environ=env) == 0
    assert (root / "envout" / "features" / "BBB").is_dir()
    # flags win over the environment
    assert main(["--out", str(root / "flagout")], environ=env) == 0
    assert (root / "flagout" / "features").is_dir()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["all", "--config", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["stage"] == "config"
    assert main(["features", "--stage", "cluster"]) == 2
    assert main([], environ={}) == 2


def test_stage_failure_leaves_report(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data_root": "nothing", "output_dir": "out", "stocks": ["AAA"]}))
    assert main(["all", "--config", str(cfg)]) == 1
    report = json.loads((tmp_path / "out" / "error_report.json").read_text())
    assert report["stage"] == "features" and report["error_type"] == "PipelineError"
    assert (tmp_path / "out" / INCOMPLETE_MARKER).exists()


def test_missing_file_day_is_skipped(universe, tmp_path):
    root, path = universe
    cfg = dataclasses.replace(load_config(path), output_dir=str(tmp_path / "out"))
    tasks = discover_tasks(cfg)
    msg, _ = lobster_paths(cfg.data_root, "BBB", tasks[-1].date)
    hidden = msg + ".bak"
    os.rename(msg, hidden)
    try:
        u = run_pipeline(cfg, "signals")
    finally:
        os.rename(hidden, msg)
    assert [(s.stock, s.date) for s in u.skipped] == [("BBB", tasks[-1].date)]
    assert "missing message file" in u.skipped[0].reason
    report = json.loads((tmp_path / "out" / "run_report.json").read_text())
    assert report["stocks"] == {"AAA": 12, "BBB": 11} and len(report["skipped"]) == 1


def test_corrupt_orderbook_is_detected(universe, tmp_path):
    root, path = universe
    cfg = load_config(path)
    task = discover_tasks(cfg)[0]
    lines = open(task.orderbook_path).read().splitlines()
    row = lines[len(lines) // 2].split(",")
    row[1] = str(int(row[1]) + 100)
    row[0] = str(int(row[0]) + 100)
    lines[len(lines) // 2] = ",".join(row)
    book = tmp_path / "book.csv"
    book.write_text("\n".join(lines) + "\n")
    res = process_day(dataclasses.replace(task, orderbook_path=str(book)))
    assert "differ from the orderbook file" in res.reason


def test_files_and_memory_agree(universe):
    """Files written by synth go through the pipeline unmodified and match the in-memory path."""
    _, path = universe
    cfg = load_config(path)
    from_files = [process_day(t) for t in discover_tasks(cfg)]
    in_memory = synthetic_results(cfg)
    assert len(from_files) == len(in_memory)
    for a, b in zip(from_files, in_memory):
        assert (a.stock, a.date) == (b.stock, b.date)
        assert np.array_equal(a.event_index, b.event_index) and np.array_equal(a.raw, b.raw)
        assert np.array_equal(a.terms, b.terms) and np.array_equal(a.returns.mids, b.returns.mids)
