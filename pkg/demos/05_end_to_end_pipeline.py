"""
The whole pipeline on a synthetic universe
==========================================

Writes LOBSTER-style files for three stocks, then runs features, clustering,
signals, roles and the backtest from those files, exactly as the ``mboflow``
command does.  The same run from a shell::

    mboflow synth --config demo.json
    mboflow all --config demo.json
"""

import json
import os
import tempfile

from mboflow.config import load_config
from mboflow.pipeline import run_pipeline, run_synth

root = tempfile.mkdtemp()
cfg_path = os.path.join(root, "demo.json")
with open(cfg_path, "w") as fh:
    json.dump({
        "data_root": "data",
        "output_dir": "out",
        "stocks": ["AAA", "BBB", "CCC"],
        "horizons": ["FRNB"],
        "synth": {"n_train_days": 20, "n_test_days": 20, "kappa": 0.9},
    }, fh)

cfg = load_config(cfg_path)
print(f"writing {len(run_synth(cfg))} stock-days under {cfg.data_root}")
u = run_pipeline(cfg, "backtest")

print("reference stock for clustering:", u.reference)
print("cluster roles:", dict(zip(("cluster0", "cluster1", "cluster2"), u.role_map.roles)))
for (horizon, scope), comp in sorted(u.comparisons.items()):
    sr = ", ".join(f"{name} {r.sharpe:.2f}" for name, r in comp.reports.items())
    print(f"{horizon}/{scope}: best {comp.best.name}; test Sharpe {sr}; beats benchmarks {comp.beats_benchmarks()}")

print("\nartifacts:")
for d, _, files in sorted(os.walk(cfg.output_dir)):
    if files and "features" not in d:
        print(" ", os.path.relpath(d, cfg.output_dir) + "/", sorted(files)[:4])
