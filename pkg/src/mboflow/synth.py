"""Synthetic market-by-order days with three planted trader archetypes.

The generator is built for verification, not realism:

* directional orders (D) are spread-improving adds at fresh prices, fired in
  short bursts in the direction of the bucket's drift.  They are the only
  events that move the mid, so each bucket's mid change is set by them.
* opportunistic orders (O) add to or partially execute against the current
  best quotes.  Their net sign in bucket ``j`` equals the drift of bucket
  ``j + 1`` with probability ``(1 + kappa) / 2``.
* market-making orders (MM) add single lots at levels 6-10 in the middle of
  each round, far from the mid changes.

The spread opens wide before the session and the day's D orders narrow it
monotonically, so D prices are always new and O never has to chase levels.
A side that grows past ten levels loses its deepest level from view, exactly
as a depth-limited book replay does.
"""

from __future__ import annotations

import csv
import datetime as dt
import os
from dataclasses import dataclass, field

import numpy as np

from .market_data import (
    EMPTY_BOOK,
    N_LEVELS,
    SESSION_START,
    TICK,
    EventFrame,
    format_message_rows,
    format_orderbook_rows,
    replay,
)
from .flow import bucket_index

ARCHETYPES = ("directional", "opportunistic", "market_making")
DIRECTIONAL, OPPORTUNISTIC, MARKET_MAKING = 0, 1, 2
_NS = 1_000_000_000
_BURST_GAP_NS = 1_000_000  # 1 ms between events of a burst
_PRESESSION_START = 34_000
MM_FIRST_LEVEL = 5  # 0-based: market makers work levels 6..10
# activity windows as (centre, half-width at separation 10), in fractions of a round
O_WINDOW = (0.85, 0.10)
MM_WINDOW = (0.40, 0.30)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``weights`` are the target event shares of directional, opportunistic and
    market-making orders.  ``separation`` sets how tightly each
    archetype keeps to its activity window within a round: window widths scale
    as ``10 / separation``, so larger values give tighter, better separated
    timing features.
    """

    seed: int = 0
    n_days: int = 10
    events_per_day: int = 1000
    lot_size: int = 100
    tick_size: int = TICK
    initial_mid: int = 1_000_000  # $100.00 in price units
    weights: tuple = (0.26, 0.12, 0.62)
    separation: float = 10.0
    kappa: float = 0.9
    window: int = 100
    rounds_per_bucket: int = 1
    unit_size: bool = False

    def __post_init__(self):
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be three non-negative numbers")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.events_per_day < self.window:
            raise ValueError("events_per_day must be at least the normalisation window")
        if self.separation < 1:
            raise ValueError("separation must be >= 1")
        if min(self.n_days, self.lot_size - 1, self.tick_size - 1, self.rounds_per_bucket - 1) < 0:
            raise ValueError("invalid size parameters")
        plan = round_plan(self)
        if plan["k_other"] >= plan["k_drift"] or plan["mm_slots"] < 1:
            raise ValueError("events_per_day and weights leave no room for the planted structure")
        spread0 = plan["rounds"] * (plan["k_drift"] + plan["k_other"]) + 4
        if self.initial_mid // self.tick_size - spread0 // 2 <= N_LEVELS:
            raise ValueError("initial_mid is too low for the spread this many directional orders need")


def round_plan(cfg: SynthConfig) -> dict:
    """Per-round event budget shared by every round of every day."""
    n_rounds = 13 * cfg.rounds_per_bucket
    per_round = (cfg.events_per_day - 2 * N_LEVELS) // n_rounds
    n_dir = max(3, int(round(cfg.weights[0] * per_round)))
    k_other = (2 * n_dir) // 5
    n_opp = 2 * (int(round(cfg.weights[1] * per_round)) // 2)
    mm_slots = per_round - n_dir - n_opp
    return {
        "rounds": n_rounds,
        "per_round": per_round,
        "k_drift": n_dir - k_other,
        "k_other": k_other,
        "n_opp": n_opp,
        "mm_slots": mm_slots,
        "dir_lots": n_opp + 2,
    }


@dataclass
class GroundTruth:
    labels: np.ndarray  # archetype per event
    drifts: np.ndarray  # +1/-1 per bucket, 13 entries
    o_signs: np.ndarray  # planted opportunistic sign per bucket
    day: int = 0
    meta: dict = field(default_factory=dict)


@dataclass
class SynthDay:
    events: EventFrame
    snapshots: np.ndarray | None  # None when generated without snapshots
    truth: GroundTruth


class _Builder:
    """Event emitter that mirrors the book it writes to."""

    def __init__(self, rng, cfg: SynthConfig):
        self.rng = rng
        self.cfg = cfg
        self.bid_px: list = []
        self.bid_vol: list = []
        self.ask_px: list = []
        self.ask_vol: list = []
        self.rows: list = []  # (time_ns, type, id, size, price, side)
        self.labels: list = []
        self.next_id = 1

    def side_lists(self, side):
        return (self.bid_px, self.bid_vol) if side == 1 else (self.ask_px, self.ask_vol)

    def emit(self, t_ns, etype, size, price, side, label):
        px, vol = self.side_lists(side)
        if etype == 1:
            if price in px:
                vol[px.index(price)] += size
            else:
                i = 0
                if side == 1:
                    while i < len(px) and px[i] > price:
                        i += 1
                else:
                    while i < len(px) and px[i] < price:
                        i += 1
                px.insert(i, price)
                vol.insert(i, size)
                if len(px) > N_LEVELS:
                    # the deepest level leaves the visible book, as in a depth-limited feed
                    px.pop()
                    vol.pop()
        else:
            i = px.index(price)
            vol[i] -= size
            assert vol[i] >= 0
            if vol[i] == 0:
                del px[i]
                del vol[i]
        self.rows.append((t_ns, etype, self.next_id, size, price, side))
        self.labels.append(label)
        self.next_id += 1


def generate_day(cfg: SynthConfig, day_index: int, stock_index: int = 0, snapshots: bool = True) -> SynthDay:
    """One self-consistent day: events, the book after each event, and ground truth.

    Each 30-minute bucket holds ``rounds_per_bucket`` rounds (one by default).
    A round opens with a directional burst that improves the other side
    ``k_other`` times and the drift side ``k_drift`` times, so the mid moves
    with the bucket's drift.  Market makers then work the deep levels, and
    opportunistic orders trade at the drift side's best late in the round.
    With ``snapshots=False`` the replayed book is skipped and ``snapshots`` is
    None.
    """
    rng = np.random.default_rng([cfg.seed, stock_index, day_index])
    plan = round_plan(cfg)
    tick = cfg.tick_size
    lot = cfg.lot_size
    unit = cfg.unit_size
    dir_size = lot if unit else plan["dir_lots"] * lot
    o_window = _window(O_WINDOW, cfg.separation)
    mm_window = _window(MM_WINDOW, cfg.separation)

    drifts = rng.choice(np.array([-1, 1]), size=13)
    follow = rng.random(13) < (1.0 + cfg.kappa) / 2.0
    o_signs = np.empty(13, dtype=np.int64)
    o_signs[:12] = np.where(follow[:12], drifts[1:], -drifts[1:])
    o_signs[12] = rng.choice(np.array([-1, 1]))

    n_dir_day = plan["rounds"] * (plan["k_drift"] + plan["k_other"])
    spread0 = n_dir_day + 4  # ticks; every directional order narrows the spread by one tick

    b = _Builder(rng, cfg)
    best_bid0 = (cfg.initial_mid // tick - spread0 // 2) * tick
    best_ask0 = best_bid0 + spread0 * tick
    pre_times = np.linspace(_PRESESSION_START * _NS, SESSION_START * _NS - _NS, 2 * N_LEVELS).astype(np.int64)
    for k in range(N_LEVELS):
        b.emit(int(pre_times[2 * k]), 1, dir_size, best_bid0 - k * tick, 1, MARKET_MAKING)
        b.emit(int(pre_times[2 * k + 1]), 1, dir_size, best_ask0 + k * tick, -1, MARKET_MAKING)

    start_ns = SESSION_START * _NS
    period = 1800 * _NS // cfg.rounds_per_bucket
    n_rounds = plan["rounds"]
    round_drift = np.repeat(drifts, cfg.rounds_per_bucket)
    mm_cursor = [0, 0]
    for rd in range(n_rounds):
        j = rd // cfg.rounds_per_bucket
        drift = int(round_drift[rd])
        t0 = start_ns + rd * period + _NS
        t = _directional_burst(b, t0, -drift, plan["k_other"], tick, dir_size, lot)
        t = _directional_burst(b, t + _BURST_GAP_NS, drift, plan["k_drift"], tick, dir_size)
        orders = _opportunistic_signs(plan["n_opp"], int(o_signs[j]))
        o_times = _window_times(rng, t0, period, o_window, len(orders), t)
        m_times = _window_times(rng, t0, period, mm_window, plan["mm_slots"], t)
        schedule = sorted([(tt, 0, i) for i, tt in enumerate(o_times)] + [(tt, 1, i) for i, tt in enumerate(m_times)])
        last = t
        for tt, kind, i in schedule:
            tt = max(tt, last + 1)
            if kind == 0:
                _opportunistic(b, tt, orders[i][0], orders[i][1], drift)
            else:
                _market_making(b, tt, mm_cursor)
            last = tt

    rows = b.rows
    t_ns = np.array([r[0] for r in rows], dtype=np.int64)
    if np.any(np.diff(t_ns) < 0):
        raise AssertionError("generator produced non-monotone times")
    events = EventFrame(
        time=_ns_to_seconds(t_ns),
        event_type=np.array([r[1] for r in rows], dtype=np.int8),
        order_id=np.array([r[2] for r in rows], dtype=np.int64),
        size=np.array([r[3] for r in rows], dtype=np.int64),
        price=np.array([r[4] for r in rows], dtype=np.int64),
        side=np.array([r[5] for r in rows], dtype=np.int8),
    )
    snaps = replay(events, EMPTY_BOOK) if snapshots else None
    truth = GroundTruth(np.array(b.labels, dtype=np.int8), drifts.astype(np.int64), o_signs, day_index,
                        {"initial_spread_ticks": spread0, **plan})
    return SynthDay(events, snaps, truth)


def _ns_to_seconds(t_ns: np.ndarray) -> np.ndarray:
    # nearest double to the exact decimal, so "%.9f" prints the nanoseconds back
    return np.array([float(f"{t // _NS}.{t % _NS:09d}") for t in t_ns.tolist()])


def _window(spec: tuple, separation: float) -> tuple:
    centre, half = spec
    half *= 10.0 / separation
    return max(0.02, centre - half), min(0.98, centre + half)


def _window_times(rng, t0: int, period: int, window: tuple, n: int, after: int) -> list:
    """``n`` sorted distinct times inside ``[t0 + window[0] * period, t0 + window[1] * period)``."""
    if n == 0:
        return []
    lo = max(t0 + int(window[0] * period), after + 1)
    hi = t0 + int(window[1] * period)
    times = np.sort(rng.integers(lo, hi, size=n)).tolist()
    for i in range(1, n):
        times[i] = max(times[i], times[i - 1] + 1)
    return times


def _directional_burst(b: _Builder, t: int, side_sign: int, k: int, tick: int, size: int,
                       first_size: int | None = None) -> int:
    """``k`` one-tick improvements on the bid (``side_sign`` > 0) or ask; returns the last time used.

    ``first_size`` overrides the size of the opening order.  The opening order
    of a round follows a long quiet spell, so it looks unlike the rest of the
    burst in feature space; keeping it small stops it from dominating the
    flow of whichever cluster it lands in.
    """
    side = 1 if side_sign > 0 else -1
    for i in range(k):
        price = b.bid_px[0] + tick if side == 1 else b.ask_px[0] - tick
        assert b.bid_px[0] < price < b.ask_px[0], "spread budget exhausted"
        b.emit(t, 1, first_size if i == 0 and first_size else size, price, side, DIRECTIONAL)
        if i < k - 1:
            t += _BURST_GAP_NS
    return t


def _opportunistic_signs(n: int, sign: int) -> list:
    """(sign, planted) pairs: a counter order then a planted one, so the level never runs dry."""
    return [(-sign, False), (sign, True)] * (n // 2)


def _opportunistic(b: _Builder, t: int, sign: int, planted: bool, drift: int) -> None:
    """One order of best-level flow with OFI sign ``sign`` at the drift side's fresh best.

    Planted orders are two lots and counter orders one lot, so the size OFI
    follows the planted sign while the count OFI nets to zero.  On the bid
    side "+" is an add or an execution (M_b enters with +) and "-" a cancel;
    the ask side is the mirror image.  A cancel that would empty the level
    becomes an add of the same sign on the other side.
    """
    lot = b.cfg.lot_size
    size = 2 * lot if planted and not b.cfg.unit_size else lot
    side = 1 if drift > 0 else -1
    px, vol = b.side_lists(side)
    if sign == side:
        if vol[0] > size and b.rng.random() < 0.5:
            b.emit(t, 4, size, px[0], side, OPPORTUNISTIC)
        else:
            b.emit(t, 1, size, px[0], side, OPPORTUNISTIC)
    elif vol[0] > size:
        b.emit(t, 2, size, px[0], side, OPPORTUNISTIC)
    else:
        other = -side
        opx, _ = b.side_lists(other)
        b.emit(t, 1, size, opx[0], other, OPPORTUNISTIC)


def _market_making(b: _Builder, t: int, cursor: list) -> None:
    """One lot added to the next deep level, cycling over levels and alternating sides."""
    side = 1 if (cursor[0] + cursor[1]) % 2 == 0 else -1
    k = 0 if side == 1 else 1
    px, _ = b.side_lists(side)
    first = min(MM_FIRST_LEVEL, len(px) - 1)
    i = first + cursor[k] % (len(px) - first)
    cursor[k] += 1
    b.emit(t, 1, b.cfg.lot_size, px[i], side, MARKET_MAKING)


def replay_check(events: EventFrame, snapshots: np.ndarray) -> bool:
    """True when replaying ``events`` from an empty book reproduces ``snapshots`` row for row."""
    snapshots = np.asarray(snapshots)
    if len(events) == 0:
        return snapshots.size == 0
    try:
        rebuilt = replay(events, EMPTY_BOOK)
    except ValueError:
        return False
    return rebuilt.shape == snapshots.shape and bool(np.array_equal(rebuilt, snapshots))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def trading_dates(n: int, start: dt.date = dt.date(2021, 1, 4)) -> list:
    """``n`` consecutive weekdays from ``start``."""
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def lobster_paths(root, stock: str, date) -> tuple[str, str]:
    stem = os.path.join(str(root), stock, f"{stock}_{date}_34200000_57600000")
    return stem + "_message_10.csv", stem + "_orderbook_10.csv"


def truth_path(root, stock: str, date) -> str:
    return os.path.join(str(root), stock, f"{stock}_{date}_truth.csv")


def write_day(root, stock: str, date, day: SynthDay) -> tuple[str, str, str]:
    """Write the message/orderbook pair and the ground-truth CSV for one day."""
    msg, book = lobster_paths(root, stock, date)
    os.makedirs(os.path.dirname(msg), exist_ok=True)
    with open(msg, "w", newline="") as fh:
        fh.write(format_message_rows(day.events))
    with open(book, "w", newline="") as fh:
        fh.write(format_orderbook_rows(day.snapshots))
    tp = truth_path(root, stock, date)
    with open(tp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_index", "archetype", "day", "bucket", "bucket_drift", "opportunistic_sign"])
        drifts = day.truth.drifts
        for i, (t, lab) in enumerate(zip(day.events.time, day.truth.labels)):
            bk = bucket_index(t) if t >= SESSION_START else 0
            w.writerow([i, ARCHETYPES[lab], day.truth.day, bk,
                        int(drifts[bk - 1]) if bk else 0, int(day.truth.o_signs[bk - 1]) if bk else 0])
    return msg, book, tp


def read_truth(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.array([ARCHETYPES.index(r["archetype"]) for r in rows], dtype=np.int8)
    return {"labels": labels, "rows": rows}
