"""Role assignment, sign-of-OFI strategies, volatility targeting and performance metrics."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ANNUALIZATION = 252
SIGMA_TARGET = 0.15
TRADES_PER_DAY = 12
ROLES = ("Directional", "Opportunistic", "MarketMaking")
HORIZONS = ("FRNB", "FREB")


class UndefinedCorrelationError(ValueError):
    pass


class MetricError(ValueError):
    pass


def pearson_correlation(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# ---------------------------------------------------------------------------
# Roles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoleMap:
    """``roles[c]`` is the role of cluster ``c`` (0-based) before relabelling.

    ``order`` lists the clusters in role order (Directional, Opportunistic,
    MarketMaking), i.e. the permutation that relabels clusters so that
    ``phi1`` is Directional.
    """

    roles: tuple
    votes: dict = field(default_factory=dict)
    tie_broken: bool = False

    @property
    def order(self) -> tuple:
        return tuple(self.roles.index(r) for r in ROLES)

    def to_dict(self) -> dict:
        return {
            "roles": {f"cluster{c + 1}": r for c, r in enumerate(self.roles)},
            "relabel_order": [c + 1 for c in self.order],
            "votes": self.votes,
            "tie_broken": self.tie_broken,
        }


def _score(corr_size, corr_count) -> float:
    vals = [c for c in (corr_size, corr_count) if c is not None and not math.isnan(c)]
    return max(vals) if vals else -math.inf


def vote_roles(conr_scores, freb_scores) -> tuple:
    """Roles for one stock from per-cluster scores (max over the two measures; -inf means no vote)."""
    conr = list(conr_scores)
    freb = list(freb_scores)
    if len(conr) != 3 or len(freb) != 3:
        raise ValueError("role assignment needs exactly three clusters")
    d = int(np.argmax(conr))  # first max wins ties
    rest = [c for c in range(3) if c != d]
    o = rest[0] if freb[rest[0]] >= freb[rest[1]] else rest[1]
    roles = [None] * 3
    roles[d] = ROLES[0]
    roles[o] = ROLES[1]
    roles[[c for c in rest if c != o][0]] = ROLES[2]
    return tuple(roles)


def cluster_scores(ofi_by_cluster: dict, returns) -> list:
    """Per-cluster max-over-measure correlation of OFI with ``returns``.

    ``ofi_by_cluster[measure]`` is an array (3, n) aligned with ``returns``.
    """
    out = []
    for c in range(3):
        corrs = []
        for measure in ("size", "count"):
            try:
                corrs.append(pearson_correlation(ofi_by_cluster[measure][c], returns))
            except UndefinedCorrelationError:
                corrs.append(None)
        out.append(_score(*corrs))
    return out


def assign_roles(per_stock_votes: dict) -> RoleMap:
    """Consensus over stocks.

    ``per_stock_votes[stock]`` is a role tuple from :func:`vote_roles`.  The
    consensus is the role bijection with the most per-cluster agreements across
    stocks; among equally supported bijections the one whose role tuple sorts
    first in role order wins, so the lowest cluster index takes the contested
    earlier role.
    """
    if not per_stock_votes:
        raise ValueError("no stock votes")
    best = None
    best_score = -1
    n_best = 0
    for perm in itertools.permutations(range(3)):
        roles = tuple(ROLES[p] for p in perm)
        score = sum(
            sum(1 for c in range(3) if v[c] == roles[c]) for v in per_stock_votes.values()
        )
        if score > best_score:
            best, best_score, n_best = roles, score, 1
        elif score == best_score:
            n_best += 1
    votes = {
        f"cluster{c + 1}": {r: sum(1 for v in per_stock_votes.values() if v[c] == r) for r in ROLES}
        for c in range(3)
    }
    return RoleMap(best, {"per_cluster": votes, "per_stock": {s: list(v) for s, v in per_stock_votes.items()}},
                   n_best > 1)


# ---------------------------------------------------------------------------
# PnL
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategySpec:
    measure: str
    cluster_scope: str
    event_scope: str
    horizon: str

    @property
    def is_benchmark(self) -> bool:
        return self.cluster_scope == "phi_star"

    @property
    def name(self) -> str:
        return f"{self.horizon}_{self.event_scope}_{self.cluster_scope}_{self.measure}"


def daily_pnl(ofi, returns) -> float:
    """Sum of sign(OFI_j) * R_j over the paired buckets; sign(0) = 0."""
    ofi = np.asarray(ofi, dtype=np.float64)
    r = np.asarray(returns, dtype=np.float64)
    if ofi.shape != r.shape:
        raise ValueError("OFI and return series must be aligned")
    if np.any(~np.isfinite(r)):
        raise ValueError("missing bucket return")
    return float(np.sign(ofi) @ r)


def equal_weighted_pnl(pnl_by_stock: dict) -> tuple[list, np.ndarray, list]:
    """Average across stocks per day over the union of days.

    Returns ``(days, series, flagged_days)``; a day absent for some stock is
    averaged over the stocks present and flagged.
    """
    days = sorted({d for s in pnl_by_stock.values() for d in s})
    n_stocks = len(pnl_by_stock)
    out = np.empty(len(days))
    flagged = []
    for i, d in enumerate(days):
        vals = [s[d] for s in pnl_by_stock.values() if d in s]
        out[i] = float(np.mean(vals))
        if len(vals) < n_stocks:
            flagged.append(d)
    return days, out, flagged


def _sample_std(x: np.ndarray) -> float:
    """Sample standard deviation; exactly 0 for a constant series despite rounding in the mean."""
    if np.all(x == x[0]):
        return 0.0
    return float(x.std(ddof=1))


def vol_target(series, sigma_tgt: float = SIGMA_TARGET, annualization: int = ANNUALIZATION) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 2:
        raise MetricError("need at least two observations")
    sd = _sample_std(x)
    if sd == 0:
        raise MetricError("zero standard deviation")
    return x * (sigma_tgt / (sd * math.sqrt(annualization)))


def sharpe(series, annualization: int = ANNUALIZATION) -> float:
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 2:
        raise MetricError("need at least two observations")
    sd = _sample_std(x)
    if sd == 0:
        raise MetricError("zero standard deviation")
    return float(x.mean() / sd * math.sqrt(annualization))


@dataclass(frozen=True)
class MetricsReport:
    expected_return: float
    volatility: float
    downside_deviation: float
    max_drawdown: float
    sortino: float
    calmar: float
    hit_rate: float
    avg_profit_over_avg_loss: float
    pnl_per_trade: float
    sharpe: float

    def to_dict(self) -> dict:
        return asdict(self)


def max_drawdown(series) -> float:
    """Most negative gap between the cumulative pnl and its running peak (starting from 0)."""
    cum = np.concatenate([[0.0], np.cumsum(np.asarray(series, dtype=np.float64))])
    return float((cum - np.maximum.accumulate(cum)).min())


def metrics(series, trades_per_day: int = TRADES_PER_DAY, strict: bool = True,
            annualization: int = ANNUALIZATION) -> MetricsReport:
    """The ten-metric report of a daily pnl series.

    ``pnl_per_trade`` is the mean daily pnl spread over ``trades_per_day``
    bucket positions, in basis points.  With ``strict=False`` undefined ratios
    are NaN instead of raising.
    """
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 2:
        raise MetricError("need at least two observations")
    if not np.all(np.isfinite(x)):
        raise MetricError("non-finite pnl")
    mean = float(x.mean())
    sd = _sample_std(x)
    er = mean * annualization
    vol = sd * math.sqrt(annualization)
    dd = math.sqrt(float(np.mean(np.minimum(x, 0.0) ** 2))) * math.sqrt(annualization)
    mdd = max_drawdown(x)
    pos = x[x > 0]
    neg = x[x < 0]

    def ratio(num, den, what):
        if den == 0:
            if strict:
                raise MetricError(f"{what} undefined")
            return float("nan")
        return num / den

    def soft_ratio(num, den):
        # unbounded rather than an error: no downside or no drawdown at all
        if den == 0:
            return math.copysign(math.inf, num) if num != 0 else float("nan")
        return num / den

    return MetricsReport(
        expected_return=er,
        volatility=vol,
        downside_deviation=dd,
        max_drawdown=mdd,
        sortino=soft_ratio(er, dd),
        calmar=soft_ratio(er, abs(mdd)),
        hit_rate=float(len(pos) / len(x)),
        avg_profit_over_avg_loss=ratio(float(pos.mean()) if len(pos) else 0.0,
                                       abs(float(neg.mean())) if len(neg) else 0.0, "avg profit / avg loss"),
        pnl_per_trade=mean / trades_per_day * 1e4,
        sharpe=ratio(mean, sd, "sharpe") * math.sqrt(annualization),
    )


# ---------------------------------------------------------------------------
# Selection and evaluation
# ---------------------------------------------------------------------------


def _tie_key(spec: StrategySpec):
    return (0 if spec.measure == "size" else 1, spec.cluster_scope)


def select_best_strategy(sharpe_by_spec: dict) -> StrategySpec:
    """Highest training SR; ties prefer size over count, then the lowest cluster index.

    NaN SRs (undefined, e.g. a strategy that never trades) are not eligible.
    """
    cands = [(s, v) for s, v in sharpe_by_spec.items() if v is not None and not math.isnan(v)]
    if not cands:
        raise ValueError("no candidate strategies")
    return min(cands, key=lambda sv: (-sv[1], _tie_key(sv[0]), sv[0].name))[0]


@dataclass
class Comparison:
    best: StrategySpec
    reports: dict
    cumulative: dict

    def beats_benchmarks(self) -> bool:
        b = self.reports[self.best.name].sharpe
        others = [r.sharpe for name, r in self.reports.items() if name != self.best.name]
        return all(not math.isnan(b) and (math.isnan(o) or b > o) for o in others)


def evaluate_out_of_sample(best: StrategySpec, benchmarks, test_series: dict,
                           sigma_tgt: float = SIGMA_TARGET, annualization: int = ANNUALIZATION,
                           trades_per_day: int = TRADES_PER_DAY) -> Comparison:
    """Metrics of the vol-targeted test pnl for the best spec and the benchmarks.

    ``test_series[spec.name]`` is the equal-weighted daily pnl over the test
    days.  A series with zero dispersion is reported unscaled with NaN ratios.
    """
    reports = {}
    cumulative = {}
    for spec in [best, *benchmarks]:
        x = np.asarray(test_series[spec.name], dtype=np.float64)
        if len(x) == 0:
            raise ValueError("empty test set")
        try:
            y = vol_target(x, sigma_tgt, annualization)
        except MetricError:
            y = x
        reports[spec.name] = metrics(y, trades_per_day, strict=False, annualization=annualization)
        cumulative[spec.name] = np.cumsum(y)
    return Comparison(best, reports, cumulative)
