"""Train/test orchestration over a stock universe.

Per (stock, day) work (parsing, replay, features, OFI terms, bucket returns)
runs in a process pool and is merged by key, so results do not depend on the
worker count.  Normalisation, clustering, role consensus and strategy
selection run single-threaded after that barrier.

Stage order: features -> cluster -> signals -> roles -> backtest.  Asking for
a stage runs everything before it and writes every artifact on the way.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import dataclasses
import datetime as dt
import json
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .clustering import base_initialize, kmeans_fit, predict
from .config import PipelineConfig
from .features import FEATURE_NAMES, featurize_day, rolling_normalize
from .flow import (
    CLUSTER_SCOPES,
    EVENT_SCOPES,
    MEASURES,
    N_BUCKETS,
    BucketReturns,
    boundary_mids,
    bucket_index,
    classify_terms,
    compute_bucket_returns,
    ofi_cube,
)
from .market_data import (
    ASK_SENTINEL,
    EMPTY_BOOK,
    BookInconsistencyError,
    BookSnapshot,
    EventFrame,
    OrderBook,
    SessionConfig,
    parse_message_file,
    parse_orderbook_row,
)
from .strategy import (
    RoleMap,
    StrategySpec,
    assign_roles,
    cluster_scores,
    daily_pnl,
    equal_weighted_pnl,
    evaluate_out_of_sample,
    metrics,
    select_best_strategy,
    vote_roles,
)
from . import synth

logger = logging.getLogger(__name__)

PIPELINE_STAGES = ("features", "cluster", "signals", "roles", "backtest")
STAGES = ("synth", *PIPELINE_STAGES, "all")
FEATURE_COLUMNS = (
    "event_index", "time", "event_type", "side", "price",
    *FEATURE_NAMES, *(f"z_{n}" for n in FEATURE_NAMES),
)
_MESSAGE_RE = re.compile(r"^(?P<stock>.+)_(?P<date>\d{4}-\d{2}-\d{2})_\d+_\d+_message_\d+\.csv$")


class PipelineError(RuntimeError):
    """A stage could not complete."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


# ---------------------------------------------------------------------------
# Per stock-day work
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DayTask:
    stock: str
    date: str
    message_path: str
    orderbook_path: str
    include_hidden: bool = False
    tick: int = 100
    verify_books: bool = True


@dataclass
class DayResult:
    """Featurised events of one stock-day (rows that produced all six features)."""

    stock: str
    date: str
    event_index: np.ndarray  # row in the message file
    time: np.ndarray
    event_type: np.ndarray
    side: np.ndarray
    price: np.ndarray
    size: np.ndarray
    raw: np.ndarray
    terms: np.ndarray
    buckets: np.ndarray
    returns: BucketReturns | None
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.event_index)


@dataclass(frozen=True)
class DaySkip:
    stock: str
    date: str
    reason: str


def book_before_first_event(first_row: BookSnapshot, event_type: int, side: int, price: int,
                            size: int) -> BookSnapshot:
    """Undo the first event on the first recorded book to get the opening state."""
    ob = OrderBook(first_row)
    if event_type == 1:
        ob.apply(2, side, price, size)
    elif event_type in (2, 3, 4):
        ob.apply(1, side, price, size)
    return ob.snapshot()


def day_result(stock: str, date: str, events: EventFrame, initial: BookSnapshot = EMPTY_BOOK,
               session: SessionConfig = SessionConfig(), tick: int = 100,
               recorded_mids: np.ndarray | None = None) -> DayResult:
    """Features, OFI terms and bucket returns of one day's events."""
    f = featurize_day(events, initial=initial, session=session, tick=tick)
    if recorded_mids is not None:
        if len(recorded_mids) != len(events):
            raise BookInconsistencyError("orderbook and message files differ in length")
        bad = np.flatnonzero(recorded_mids != f.snap_mid)
        if len(bad):
            raise BookInconsistencyError(f"replayed best quotes differ from the orderbook file at row {bad[0]}")
    kept = np.flatnonzero(session.keep_mask(events))
    ok = f.ok
    ev = f.events.take(ok)
    terms = classify_terms(ev.event_type, ev.side, ev.price, f.best_bid[ok], f.best_ask[ok]).astype(np.int8)
    diag = dict(f.diagnostics)
    try:
        returns = compute_bucket_returns(boundary_mids(f.snap_time, f.snap_mid, f.initial_mid))
    except ValueError as exc:
        returns = None
        diag["returns_error"] = str(exc)
    return DayResult(
        stock, date, kept[ok], ev.time, ev.event_type, ev.side, ev.price, ev.size, f.raw[ok], terms,
        bucket_index(ev.time) if len(ev) else np.zeros(0, dtype=np.int64), returns, diag,
    )


def _recorded_mids(path: str) -> np.ndarray:
    top = pd.read_csv(path, header=None, usecols=[0, 1, 2, 3], dtype=np.int64).to_numpy()
    ap, av, bp, bv = top.T
    both = (av > 0) & (bv > 0) & (ap > 0) & (ap < ASK_SENTINEL) & (bp > 0)
    return np.where(both, ap + bp, -1)


def process_day(task: DayTask):
    """Worker entry point; failures come back as :class:`DaySkip` records."""
    for path, what in ((task.message_path, "message"), (task.orderbook_path, "orderbook")):
        if not os.path.exists(path):
            return DaySkip(task.stock, task.date, f"missing {what} file {os.path.basename(path)}")
    try:
        events = parse_message_file(task.message_path)
        if len(events) == 0:
            return DaySkip(task.stock, task.date, "empty message file")
        with open(task.orderbook_path) as fh:
            first = fh.readline()
        initial = book_before_first_event(parse_orderbook_row(first), int(events.event_type[0]),
                                          int(events.side[0]), int(events.price[0]), int(events.size[0]))
        mids = _recorded_mids(task.orderbook_path) if task.verify_books else None
        session = SessionConfig(include_hidden_executions=task.include_hidden)
        return day_result(task.stock, task.date, events, initial, session, task.tick, mids)
    except (ValueError, OSError) as exc:
        return DaySkip(task.stock, task.date, f"{type(exc).__name__}: {exc}")


def run_tasks(fn, tasks: list, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]`` on ``workers`` processes, results in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# ---------------------------------------------------------------------------
# Universe-level steps
# ---------------------------------------------------------------------------


@dataclass
class StockDays:
    """One stock's day results in date order with normalised features and labels."""

    days: list  # DayResult, sorted by date
    z: list = field(default_factory=list)  # per day: (n, 6) with NaN rows where unlabeled
    labels: list = field(default_factory=list)  # per day: 0-based cluster, -1 unlabeled


def normalize_stock(days: list, w: int) -> list:
    """Rolling z-scores over a stock's days in date order; the window carries across days."""
    sizes = [len(d) for d in days]
    raw = np.vstack([d.raw for d in days]) if days else np.zeros((0, 6))
    z = rolling_normalize(raw, w)
    full = np.full(raw.shape, np.nan)
    full[w - 1:] = z
    out = []
    s = 0
    for n in sizes:
        out.append(full[s:s + n])
        s += n
    return out


def _labeled(z: np.ndarray) -> np.ndarray:
    return ~np.isnan(z[:, 0])


def day_cube(day: DayResult, labels: np.ndarray, legacy_trade_sign: bool = False) -> np.ndarray:
    """OFI cube of the labeled events of a day (unlabeled events carry no cluster)."""
    sel = labels >= 0
    return ofi_cube(day.terms[sel], day.size[sel], day.buckets[sel], labels[sel], legacy_trade_sign)


@dataclass
class UniverseResult:
    """Everything the pipeline computed, keyed by stock and ISO date."""

    config: PipelineConfig
    stocks: dict  # symbol -> StockDays
    skipped: list  # DaySkip
    models: dict = field(default_factory=dict)  # symbol -> ClusterModel (model cluster order)
    reference: str | None = None
    cubes: dict = field(default_factory=dict)  # (symbol, date) -> (4, 4, 2, 13) in model cluster order
    role_map: RoleMap | None = None
    train_sharpe: dict = field(default_factory=dict)  # (horizon, scope) -> {StrategySpec: SR}
    comparisons: dict = field(default_factory=dict)  # (horizon, scope) -> Comparison
    test_days: dict = field(default_factory=dict)  # (horizon, scope) -> (dates, flagged)
    train_days: dict = field(default_factory=dict)


def _split(cfg: PipelineConfig, days: list):
    train = [i for i, d in enumerate(days) if dt.date.fromisoformat(d.date) in cfg.train]
    test = [i for i, d in enumerate(days) if dt.date.fromisoformat(d.date) in cfg.test]
    return train, test


def build_universe(cfg: PipelineConfig, results: list) -> UniverseResult:
    """Group day results by stock (date order) and normalise features."""
    skipped = [r for r in results if isinstance(r, DaySkip)]
    for s in skipped:
        logger.warning("skipping %s %s: %s", s.stock, s.date, s.reason)
    stocks = {}
    for sym in cfg.symbols:
        days = sorted((r for r in results if isinstance(r, DayResult) and r.stock == sym), key=lambda r: r.date)
        sd = StockDays(days)
        sd.z = normalize_stock(days, cfg.window)
        stocks[sym] = sd
    return UniverseResult(cfg, stocks, skipped)


def choose_reference(cfg: PipelineConfig, available: list) -> str:
    if not available:
        raise PipelineError("cluster", "no stock has labeled training events")
    if cfg.reference_stock is None:
        return available[0]
    if cfg.reference_stock == "seeded":
        return available[int(np.random.default_rng(cfg.seed).integers(len(available)))]
    if cfg.reference_stock not in available:
        raise PipelineError("cluster", f"reference stock {cfg.reference_stock} has no training data")
    return cfg.reference_stock


def fit_clusters(u: UniverseResult) -> None:
    """Reference fit, then base-initialised fits per stock; labels every day."""
    cfg = u.config
    points = {}
    for sym, sd in u.stocks.items():
        train, _ = _split(cfg, sd.days)
        zs = [sd.z[i][_labeled(sd.z[i])] for i in train]
        if zs and sum(len(z) for z in zs):
            points[sym] = np.vstack(zs)
    ref = choose_reference(cfg, [s for s in cfg.symbols if s in points])
    try:
        ref_model, _ = kmeans_fit(points[ref], cfg.K, rng_seed=cfg.seed, max_iter=cfg.max_iter, tol=cfg.tol,
                                  subsample=cfg.subsample, n_init=cfg.n_init)
    except ValueError as exc:
        raise PipelineError("cluster", f"reference fit on {ref} failed: {exc}") from exc
    u.reference = ref
    for sym in cfg.symbols:
        if sym not in points:
            logger.warning("no training events for %s; it is left out of clustering", sym)
            continue
        if sym == ref:
            u.models[sym] = ref_model
        else:
            u.models[sym], _ = base_initialize(ref_model, points[sym], max_iter=cfg.max_iter, tol=cfg.tol,
                                               subsample=cfg.subsample, rng_seed=cfg.seed)
    for sym, sd in u.stocks.items():
        sd.labels = []
        for z in sd.z:
            lab = np.full(len(z), -1, dtype=np.int64)
            m = _labeled(z)
            if sym in u.models and m.any():
                lab[m] = predict(u.models[sym], z[m])
            sd.labels.append(lab)


def compute_signals(u: UniverseResult) -> None:
    for sym, sd in u.stocks.items():
        if sym not in u.models:
            continue
        for day, lab in zip(sd.days, sd.labels):
            u.cubes[(sym, day.date)] = day_cube(day, lab, u.config.legacy_trade_sign)


def _usable(u: UniverseResult, sym: str, day: DayResult) -> bool:
    return day.returns is not None and (sym, day.date) in u.cubes


def compute_roles(u: UniverseResult) -> RoleMap:
    """Per-stock votes from pooled training (day, bucket) pairs, then the consensus."""
    cfg = u.config
    e_all = EVENT_SCOPES.index("all")
    votes = {}
    for sym, sd in u.stocks.items():
        train, _ = _split(cfg, sd.days)
        days = [sd.days[i] for i in train if _usable(u, sym, sd.days[i])]
        if len(days) < 1:
            continue
        conr_ofi = {m: np.hstack([u.cubes[(sym, d.date)][:3, e_all, k] for d in days]) for k, m in enumerate(MEASURES)}
        freb_ofi = {m: np.hstack([u.cubes[(sym, d.date)][:3, e_all, k, :N_BUCKETS - 1] for d in days])
                    for k, m in enumerate(MEASURES)}
        conr = np.hstack([d.returns.conr for d in days])
        freb = np.hstack([d.returns.freb for d in days])
        votes[sym] = vote_roles(cluster_scores(conr_ofi, conr), cluster_scores(freb_ofi, freb))
    if not votes:
        raise PipelineError("roles", "no stock has usable training days")
    u.role_map = assign_roles(votes)
    return u.role_map


def _spec_ofi(cube: np.ndarray, spec: StrategySpec, order: tuple) -> np.ndarray:
    """OFI series of ``spec`` for buckets 1..12, with role-ordered cluster names."""
    e = EVENT_SCOPES.index(spec.event_scope)
    m = MEASURES.index(spec.measure)
    if spec.cluster_scope == "phi_star":
        c = 3
    else:
        c = order[CLUSTER_SCOPES.index(spec.cluster_scope)]
    return cube[c, e, m, :N_BUCKETS - 1]


def _pnl_by_stock(u: UniverseResult, spec: StrategySpec, which: int) -> dict:
    order = u.role_map.order
    out = {}
    for sym, sd in u.stocks.items():
        idx = _split(u.config, sd.days)[which]
        per_day = {}
        for i in idx:
            d = sd.days[i]
            if not _usable(u, sym, d):
                continue
            r = d.returns.frnb if spec.horizon == "FRNB" else d.returns.freb
            per_day[d.date] = daily_pnl(_spec_ofi(u.cubes[(sym, d.date)], spec, order), r)
        if per_day:
            out[sym] = per_day
    return out


def candidate_specs(horizon: str, scope: str) -> list:
    return [StrategySpec(m, c, scope, horizon) for m in MEASURES for c in CLUSTER_SCOPES[:3]]


def benchmark_specs(horizon: str, scope: str) -> list:
    return [StrategySpec(m, "phi_star", scope, horizon) for m in MEASURES]


def run_backtest(u: UniverseResult) -> None:
    cfg = u.config
    for horizon in cfg.horizons:
        for scope in cfg.event_scopes:
            sr = {}
            for spec in candidate_specs(horizon, scope) + benchmark_specs(horizon, scope):
                days, series, flagged = equal_weighted_pnl(_pnl_by_stock(u, spec, 0))
                if len(series) < 2:
                    raise PipelineError("backtest", "fewer than two training days")
                sr[spec] = metrics(series, cfg.trades_per_day, strict=False, annualization=cfg.annualization).sharpe
                u.train_days[(horizon, scope)] = (days, flagged)
            u.train_sharpe[(horizon, scope)] = sr
            best = select_best_strategy({s: v for s, v in sr.items() if not s.is_benchmark})
            test = {}
            for spec in [best, *benchmark_specs(horizon, scope)]:
                days, series, flagged = equal_weighted_pnl(_pnl_by_stock(u, spec, 1))
                if len(series) == 0:
                    raise PipelineError("backtest", "no test days")
                test[spec.name] = series
                u.test_days[(horizon, scope)] = (days, flagged)
            u.comparisons[(horizon, scope)] = evaluate_out_of_sample(
                best, benchmark_specs(horizon, scope), test, cfg.sigma_target, cfg.annualization, cfg.trades_per_day)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def discover_tasks(cfg: PipelineConfig) -> list:
    """Day tasks inside the train/test ranges for every date with a message or orderbook file.

    A day with only one of the two files still becomes a task; the worker
    reports it as skipped.
    """
    tasks = []
    for sym in cfg.symbols:
        folder = os.path.join(cfg.data_root, sym)
        names = sorted(os.listdir(folder)) if os.path.isdir(folder) else []
        if not names:
            logger.warning("no files for %s under %s", sym, cfg.data_root)
        dates = set()
        for name in names:
            m = _MESSAGE_RE.match(name.replace("_orderbook_", "_message_"))
            if m and m.group("stock") == sym:
                dates.add(m.group("date"))
        for date in sorted(dates):
            day = dt.date.fromisoformat(date)
            if day not in cfg.train and day not in cfg.test:
                continue
            msg, book = synth.lobster_paths(cfg.data_root, sym, date)
            tasks.append(DayTask(sym, date, msg, book, cfg.include_hidden, cfg.tick_size, cfg.verify_books))
    return tasks


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def _jsonable(obj):
    """Strict JSON: undefined or unbounded ratios (NaN, inf) become null."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class ArtifactWriter:
    """Writes CSV/JSON artifacts under the output directory with a provenance header."""

    def __init__(self, cfg: PipelineConfig):
        self.root = cfg.output_dir
        self.header = f"# mboflow {__version__} config {cfg.config_hash()}"
        self.meta = {"mboflow_version": __version__, "config_hash": cfg.config_hash()}
        self.written: list = []

    def path(self, *parts) -> str:
        p = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def csv(self, rel: tuple, columns, rows) -> str:
        p = self.path(*rel)
        with open(p, "w", newline="") as fh:
            fh.write(self.header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.written.append(p)
        return p

    def json(self, rel: tuple, obj: dict) -> str:
        p = self.path(*rel)
        with open(p, "w") as fh:
            fh.write(json.dumps(_jsonable({**obj, "meta": self.meta}), indent=2, allow_nan=False) + "\n")
        self.written.append(p)
        return p


def write_features(u: UniverseResult, w: ArtifactWriter) -> None:
    for sym, sd in u.stocks.items():
        for day, z in zip(sd.days, sd.z):
            rows = (
                [int(day.event_index[i]), f"{day.time[i]:.9f}", int(day.event_type[i]), int(day.side[i]),
                 int(day.price[i]), *day.raw[i].tolist(), *z[i].tolist()]
                for i in range(len(day))
            )
            w.csv(("features", sym, f"{sym}_{day.date}_features.csv"), FEATURE_COLUMNS, rows)


def write_models(u: UniverseResult, w: ArtifactWriter) -> None:
    for sym, model in u.models.items():
        w.json(("models", f"{sym}.json"), {**model.to_dict(), "stock": sym, "reference": u.reference})


def write_signals(u: UniverseResult, w: ArtifactWriter) -> None:
    sig_rows, ret_rows = [], []
    for sym, sd in u.stocks.items():
        for day in sd.days:
            cube = u.cubes.get((sym, day.date))
            if cube is not None:
                for c, cs in enumerate(CLUSTER_SCOPES):
                    for e, es in enumerate(EVENT_SCOPES):
                        for m, ms in enumerate(MEASURES):
                            for j in range(N_BUCKETS):
                                sig_rows.append([sym, day.date, j + 1, cs, es, ms, int(cube[c, e, m, j])])
            if day.returns is not None:
                r = day.returns
                for j in range(N_BUCKETS):
                    ret_rows.append([sym, day.date, j + 1, float(r.conr[j]),
                                     float(r.frnb[j]) if j < N_BUCKETS - 1 else float("nan"),
                                     float(r.freb[j]) if j < N_BUCKETS - 1 else float("nan")])
    w.csv(("signals", "ofi.csv"), ("stock", "date", "bucket", "cluster_scope", "event_scope", "measure", "ofi_value"),
          sig_rows)
    w.csv(("signals", "returns.csv"), ("stock", "date", "bucket", "conr", "frnb", "freb"), ret_rows)


def write_roles(u: UniverseResult, w: ArtifactWriter) -> None:
    w.json(("roles", "role_map.json"), u.role_map.to_dict())


def write_backtest(u: UniverseResult, w: ArtifactWriter) -> None:
    rows = []
    for (horizon, scope), sr in u.train_sharpe.items():
        for spec, v in sr.items():
            rows.append([horizon, scope, spec.cluster_scope, spec.measure, v])
    w.csv(("backtest", "train_sharpe.csv"), ("horizon", "event_scope", "cluster_scope", "measure", "sharpe"), rows)
    summary = {}
    for (horizon, scope), comp in u.comparisons.items():
        dates, flagged = u.test_days[(horizon, scope)]
        report = {
            "horizon": horizon,
            "event_scope": scope,
            "best": comp.best.name,
            "best_beats_benchmarks": comp.beats_benchmarks(),
            "train_sharpe": {s.name: v for s, v in u.train_sharpe[(horizon, scope)].items()},
            "test_metrics": {name: r.to_dict() for name, r in comp.reports.items()},
            "test_days": len(dates),
            "flagged_days": flagged,
            "estimators": {"metrics_std": "sample (n-1)", "feature_normalization_std": "population (n)",
                           "annualization": u.config.annualization, "sigma_target": u.config.sigma_target},
        }
        w.json(("backtest", f"{horizon}_{scope}.json"), report)
        for name, cum in comp.cumulative.items():
            w.csv(("backtest", "cumulative", f"{name}.csv"), ("date", "value"), zip(dates, cum.tolist()))
        summary[f"{horizon}_{scope}"] = {"best": comp.best.name, "best_beats_benchmarks": comp.beats_benchmarks(),
                                         "test_sharpe": {n: r.sharpe for n, r in comp.reports.items()}}
    w.json(("backtest", "summary.json"), summary)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def synth_plan(cfg: PipelineConfig) -> tuple[synth.SynthConfig, list, list]:
    """Generator settings plus the train and test dates of the synthetic universe."""
    s = cfg.synth
    train_dates = synth.trading_dates(s.n_train_days, cfg.train.start)
    test_dates = synth.trading_dates(s.n_test_days, cfg.test.start)
    if train_dates and train_dates[-1] > cfg.train.end or test_dates and test_dates[-1] > cfg.test.end:
        raise PipelineError("synth", "requested synthetic days do not fit in the train/test ranges")
    scfg = synth.SynthConfig(seed=cfg.seed, n_days=len(train_dates) + len(test_dates),
                             events_per_day=s.events_per_day, lot_size=s.lot_size, tick_size=cfg.tick_size,
                             initial_mid=s.initial_mid, weights=tuple(s.weights), separation=s.separation,
                             kappa=s.kappa, window=cfg.window, unit_size=s.unit_size)
    return scfg, train_dates, test_dates


def run_synth(cfg: PipelineConfig) -> list:
    """Write synthetic LOBSTER pairs and truth files for every configured stock."""
    scfg, train_dates, test_dates = synth_plan(cfg)
    tasks = [(cfg.data_root, si, sym, k, d.isoformat(), scfg)
             for si, sym in enumerate(cfg.symbols) for k, d in enumerate(train_dates + test_dates)]
    paths = run_tasks(_synth_task, tasks, cfg.workers)
    manifest = {"synth": dataclasses.asdict(scfg), "stocks": cfg.symbols,
                "train_dates": [d.isoformat() for d in train_dates],
                "test_dates": [d.isoformat() for d in test_dates],
                "mboflow_version": __version__, "config_hash": cfg.config_hash()}
    os.makedirs(cfg.data_root, exist_ok=True)
    with open(os.path.join(cfg.data_root, "synth_manifest.json"), "w") as fh:
        fh.write(json.dumps(manifest, indent=2) + "\n")
    return paths


def synthetic_results(cfg: PipelineConfig) -> list:
    """The same universe as ``run_synth`` writes, processed in memory without touching disk."""
    scfg, train_dates, test_dates = synth_plan(cfg)
    session = SessionConfig(include_hidden_executions=cfg.include_hidden)
    tasks = [(si, sym, k, d.isoformat(), scfg, session, cfg.tick_size)
             for si, sym in enumerate(cfg.symbols) for k, d in enumerate(train_dates + test_dates)]
    return run_tasks(_memory_task, tasks, cfg.workers)


def _memory_task(args):
    si, sym, k, date, scfg, session, tick = args
    day = synth.generate_day(scfg, k, stock_index=si, snapshots=False)
    return day_result(sym, date, day.events, session=session, tick=tick)


def _synth_task(args):
    root, si, sym, k, date, scfg = args
    return synth.write_day(root, sym, date, synth.generate_day(scfg, k, stock_index=si))


def run_pipeline(cfg: PipelineConfig, stage: str = "backtest", write: bool = True,
                 results: list | None = None) -> UniverseResult:
    """Run the pipeline up to ``stage``; ``results`` bypasses file discovery (in-memory days)."""
    if stage == "all":
        stage = PIPELINE_STAGES[-1]
    if stage not in PIPELINE_STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    upto = PIPELINE_STAGES.index(stage)
    w = ArtifactWriter(cfg) if write else None
    if results is None:
        results = run_tasks(process_day, discover_tasks(cfg), cfg.workers)
    u = build_universe(cfg, results)
    if not any(sd.days for sd in u.stocks.values()):
        raise PipelineError("features", "no usable stock-days found")
    if w:
        write_features(u, w)
    steps = [(fit_clusters, write_models), (compute_signals, write_signals), (compute_roles, write_roles),
             (run_backtest, write_backtest)]
    for compute, emit in steps[:upto]:
        compute(u)
        if w:
            emit(u, w)
    if w:
        w.json(("run_report.json",), {
            "stage": stage,
            "stocks": {s: len(sd.days) for s, sd in u.stocks.items()},
            "skipped": [dataclasses.asdict(s) for s in u.skipped],
            "reference_stock": u.reference,
        })
    return u
