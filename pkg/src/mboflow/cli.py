"""Command line entry point.

    mboflow SUBCOMMAND [--config PATH] [--stage NAME] [--workers N] [--seed N] [--out DIR]

Subcommands: synth, features, cluster, signals, roles, backtest, all.
``--stage`` may stand in for the subcommand.  Each flag falls back to an
environment variable (MBOFLOW_CONFIG, MBOFLOW_STAGE, MBOFLOW_WORKERS,
MBOFLOW_SEED, MBOFLOW_OUT) when not given.

Feature CSV columns, in order: event_index, time, event_type, side, price,
V, T_m, T_1, T_prev, SBS, OBS, z_V, z_T_m, z_T_1, z_T_prev, z_SBS, z_OBS
(normalised columns are empty for the first w-1 events of a stock).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import traceback

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import STAGES, PipelineError, run_pipeline, run_synth

logger = logging.getLogger("mboflow")

_ENV = {
    "config": "MBOFLOW_CONFIG",
    "stage": "MBOFLOW_STAGE",
    "workers": "MBOFLOW_WORKERS",
    "seed": "MBOFLOW_SEED",
    "out": "MBOFLOW_OUT",
}
INCOMPLETE_MARKER = "INCOMPLETE"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mboflow",
        description="Cluster order flow, build OFI signals and backtest them.",
        epilog=__doc__.split("\n\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("subcommand", nargs="?", choices=STAGES, help="pipeline stage to run")
    p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    p.add_argument("--stage", choices=STAGES, help="same as the subcommand")
    p.add_argument("--workers", type=int, help="processes for per stock-day work")
    p.add_argument("--seed", type=int, help="clustering and synthetic-data seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def _resolve(args, environ) -> dict:
    """Flags win over environment variables."""
    out = {}
    for key, var in _ENV.items():
        val = getattr(args, key)
        if val is None and environ.get(var):
            val = environ[var]
        out[key] = val
    stage = args.subcommand
    if stage and out["stage"] and out["stage"] != stage:
        raise ConfigError(f"subcommand {stage!r} conflicts with stage {out['stage']!r}")
    out["stage"] = stage or out["stage"]
    if not out["stage"]:
        raise ConfigError("no subcommand given")
    if out["stage"] not in STAGES:
        raise ConfigError(f"unknown stage {out['stage']!r}")
    return out


def make_config(opts: dict) -> PipelineConfig:
    cfg = load_config(opts["config"]) if opts["config"] else PipelineConfig()
    changes = {}
    if opts["workers"] is not None:
        changes["workers"] = int(opts["workers"])
    if opts["seed"] is not None:
        changes["seed"] = int(opts["seed"])
    if opts["out"] is not None:
        changes["output_dir"] = opts["out"]
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _error_report(out_dir: str, stage: str, exc: BaseException) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "error_report.json")
    report = {
        "stage": getattr(exc, "stage", stage),
        "error_type": type(exc).__name__,
        "message": getattr(exc, "message", str(exc)),
        "traceback": traceback.format_exception(type(exc), exc, exc.__traceback__)[-3:],
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(report, indent=2) + "\n")
    return path


def main(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = _resolve(args, environ)
        cfg = make_config(opts)
    except (ConfigError, ValueError, OSError) as exc:
        print(json.dumps({"stage": "config", "error_type": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    stage = opts["stage"]
    marker = os.path.join(cfg.output_dir, INCOMPLETE_MARKER)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(marker, "w") as fh:
        fh.write(stage + "\n")
    try:
        if stage == "synth":
            paths = run_synth(cfg)
            logger.info("wrote %d synthetic stock-days under %s", len(paths), cfg.data_root)
        else:
            u = run_pipeline(cfg, stage)
            for s in u.skipped:
                logger.info("skipped %s %s: %s", s.stock, s.date, s.reason)
            for (h, scope), comp in sorted(u.comparisons.items()):
                logger.info("%s/%s best %s beats benchmarks: %s", h, scope, comp.best.name, comp.beats_benchmarks())
    except (PipelineError, ValueError, OSError) as exc:
        path = _error_report(cfg.output_dir, stage, exc)
        logger.error("%s failed: %s (report: %s)", stage, exc, path)
        return 1
    os.remove(marker)
    return 0


if __name__ == "__main__":
    sys.exit(main())
