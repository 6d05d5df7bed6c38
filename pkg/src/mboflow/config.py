"""Pipeline configuration: a JSON document with every constant spelled out.

Schema (all keys optional; defaults shown by ``default_config_dict()``)::

    data_root          directory of <STOCK>/<STOCK>_<date>_..._message_10.csv pairs
    output_dir         where artifacts are written
    stocks             [{"symbol": "AAA", "group": "small"}, ...]
    train, test        {"start": "YYYY-MM-DD", "end": "YYYY-MM-DD"}, inclusive
    window             rolling normalisation window w
    K                  cluster count
    sigma_target       annualised volatility target
    annualization      trading days per year
    trades_per_day     bucket positions per day used for pnl per trade
    seed               K-means++ seed (and synthetic data seed)
    reference_stock    symbol, null for the first stock, or "seeded"
    n_init             K-means++ restarts for the reference fit
    max_iter, tol      Lloyd stopping rule
    subsample          optional cap on training points per fit
    event_scopes       subset of all/add/cancel/trade
    horizons           subset of FRNB/FREB
    legacy_trade_sign  flip the trade terms of the OFI
    include_hidden     keep hidden executions (type 5)
    verify_books       check replayed best quotes against the orderbook file
    tick_size          price units per tick
    workers            process count for per stock-day work
    synth              settings for the ``synth`` subcommand (see SynthSettings)

Relative paths are resolved against the directory of the config file.
Environment variables ``MBOFLOW_CONFIG``, ``MBOFLOW_STAGE``,
``MBOFLOW_WORKERS``, ``MBOFLOW_SEED`` and ``MBOFLOW_OUT`` mirror the CLI flags.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass, field

from .flow import EVENT_SCOPES
from .strategy import ANNUALIZATION, HORIZONS, SIGMA_TARGET, TRADES_PER_DAY

# keys that change how work is scheduled or where it lands, never what is computed
_UNHASHED = ("workers", "output_dir", "data_root")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StockSpec:
    symbol: str
    group: str = "unknown"


@dataclass(frozen=True)
class DateRange:
    start: dt.date
    end: dt.date

    def __contains__(self, day: dt.date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True)
class SynthSettings:
    n_train_days: int = 60
    n_test_days: int = 60
    events_per_day: int = 1000
    kappa: float = 0.9
    separation: float = 10.0
    weights: tuple = (0.26, 0.12, 0.62)
    lot_size: int = 100
    initial_mid: int = 1_000_000
    unit_size: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    data_root: str = "data"
    output_dir: str = "out"
    stocks: tuple = (StockSpec("AAA", "small"),)
    train: DateRange = DateRange(dt.date(2021, 1, 1), dt.date(2021, 6, 30))
    test: DateRange = DateRange(dt.date(2021, 7, 1), dt.date(2021, 12, 31))
    window: int = 100
    K: int = 3
    sigma_target: float = SIGMA_TARGET
    annualization: int = ANNUALIZATION
    trades_per_day: int = TRADES_PER_DAY
    seed: int = 0
    reference_stock: str | None = None
    n_init: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    subsample: int | None = None
    event_scopes: tuple = EVENT_SCOPES
    horizons: tuple = HORIZONS
    legacy_trade_sign: bool = False
    include_hidden: bool = False
    verify_books: bool = True
    tick_size: int = 100
    workers: int = 1
    synth: SynthSettings = field(default_factory=SynthSettings)

    def __post_init__(self):
        if not self.stocks:
            raise ConfigError("at least one stock is required")
        symbols = [s.symbol for s in self.stocks]
        if len(set(symbols)) != len(symbols):
            raise ConfigError("duplicate stock symbols")
        for r, name in ((self.train, "train"), (self.test, "test")):
            if r.start > r.end:
                raise ConfigError(f"{name} range is empty")
        if self.train.end >= self.test.start:
            raise ConfigError("train range must end before the test range starts")
        if self.window < 1 or self.K < 1 or self.n_init < 1 or self.max_iter < 1 or self.workers < 1:
            raise ConfigError("window, K, n_init, max_iter and workers must be positive")
        if self.K != 3:
            raise ConfigError("role assignment needs K = 3")
        if not set(self.event_scopes) <= set(EVENT_SCOPES) or not self.event_scopes:
            raise ConfigError(f"event_scopes must be a non-empty subset of {EVENT_SCOPES}")
        if not set(self.horizons) <= set(HORIZONS) or not self.horizons:
            raise ConfigError(f"horizons must be a non-empty subset of {HORIZONS}")
        if self.reference_stock not in (None, "seeded") and self.reference_stock not in symbols:
            raise ConfigError(f"reference_stock {self.reference_stock!r} is not in the stock list")

    @property
    def symbols(self) -> list:
        return [s.symbol for s in self.stocks]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stocks"] = [dataclasses.asdict(s) for s in self.stocks]
        d["train"] = {"start": self.train.start.isoformat(), "end": self.train.end.isoformat()}
        d["test"] = {"start": self.test.start.isoformat(), "end": self.test.end.isoformat()}
        d["event_scopes"] = list(self.event_scopes)
        d["horizons"] = list(self.horizons)
        d["synth"]["weights"] = list(self.synth.weights)
        return d

    def config_hash(self) -> str:
        """Short digest of everything that affects results."""
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def default_config_dict() -> dict:
    return PipelineConfig().to_dict()


def _date(value, key) -> dt.date:
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{key}: bad date {value!r}") from exc


def config_from_dict(d: dict, base_dir: str | None = None) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = dict(d)
    if "stocks" in kw:
        stocks = []
        for s in kw["stocks"]:
            stocks.append(StockSpec(s) if isinstance(s, str) else StockSpec(**s))
        kw["stocks"] = tuple(stocks)
    for key in ("train", "test"):
        if key in kw:
            r = kw[key]
            kw[key] = DateRange(_date(r["start"], f"{key}.start"), _date(r["end"], f"{key}.end"))
    for key in ("event_scopes", "horizons"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if "synth" in kw:
        sd = dict(kw["synth"])
        bad = set(sd) - {f.name for f in dataclasses.fields(SynthSettings)}
        if bad:
            raise ConfigError(f"unknown synth keys: {sorted(bad)}")
        if "weights" in sd:
            sd["weights"] = tuple(sd["weights"])
        kw["synth"] = SynthSettings(**sd)
    if base_dir is not None:
        for key in ("data_root", "output_dir"):
            if key in kw and not os.path.isabs(kw[key]):
                kw[key] = os.path.join(base_dir, kw[key])
    try:
        return PipelineConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))
