"""Per-order book features and forward-rolling normalisation.

For every order event six quantities are read off the book state just before
the event:

    V       shares resting at the order's price on its own side
    T_m     seconds since the mid-price last changed
    T_1     seconds since the first arrival at this (side, price) level
    T_prev  seconds since the previous arrival at this level
    SBS     same-side shares from the best quote through the order's price
    OBS     opposite-side shares from the opposite best through the mirrored
            price ``2 m - p``

Arrival times are recorded for adds only and are forgotten once the level is
emptied, so ``T_1`` measures the age of the level's current incarnation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .market_data import (
    EMPTY_BOOK,
    N_LEVELS,
    TICK,
    BookSnapshot,
    EventFrame,
    MboEvent,
    OrderBook,
    SessionConfig,
)

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("V", "T_m", "T_1", "T_prev", "SBS", "OBS")
DEFAULT_WINDOW = 100


class FeatureError(ValueError):
    """The book side needed for a feature is empty."""


@dataclass(frozen=True)
class FeatureVector:
    V: float
    T_m: float
    T_1: float
    T_prev: float
    SBS: float
    OBS: float

    def as_array(self) -> np.ndarray:
        return np.array([self.V, self.T_m, self.T_1, self.T_prev, self.SBS, self.OBS])


@dataclass
class PriceLevelHistory:
    """First and most recent add time per ``(side, price)``."""

    entries: dict = field(default_factory=dict)

    def get(self, side: int, price: int):
        return self.entries.get((int(side), int(price)))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class MidState:
    current_mid: int | None = None
    last_change_time: float = 0.0

    @classmethod
    def start(cls, book: BookSnapshot, time: float) -> "MidState":
        return cls(book.mid, time)


def mirrored_price(side: int, price: int, best_bid: int, best_ask: int, tick: int = TICK) -> int:
    """Price symmetric to ``price`` about the mid, snapped to the grid toward the opposite best."""
    p = best_bid + best_ask - price
    if side == 1:
        return (p // tick) * tick  # ask side: round down toward a1
    return -((-p) // tick) * tick  # bid side: round up toward b1


def _raw_features(t, side, price, bid_px, bid_vol, ask_px, ask_vol, hist, mid_time, tick):
    """Core feature computation on plain lists; returns a 6-tuple or None if a side is empty."""
    if not bid_px or not ask_px:
        return None
    b1, a1 = bid_px[0], ask_px[0]
    v = sbs = obs = 0
    if side == 1:
        for p, q in zip(bid_px, bid_vol):
            if p < price:
                break
            sbs += q
            if p == price:
                v = q
        mirror = (b1 + a1 - price) // tick * tick  # mirrored_price, inlined for speed
        for p, q in zip(ask_px, ask_vol):
            if p > mirror:
                break
            obs += q
    else:
        for p, q in zip(ask_px, ask_vol):
            if p > price:
                break
            sbs += q
            if p == price:
                v = q
        mirror = -((price - b1 - a1) // tick) * tick
        for p, q in zip(bid_px, bid_vol):
            if p < mirror:
                break
            obs += q
    entry = hist.get((side, price))
    if entry is None:
        t1 = tp = 0.0
    else:
        t1 = t - entry[0]
        tp = t - entry[1]
    return (v, t - mid_time, t1, tp, sbs, obs)


def _record(hist, etype, side, price, t, remaining):
    if etype == 1:
        entry = hist.get((side, price))
        if entry is None:
            hist[(side, price)] = [t, t]
        else:
            entry[1] = t
    elif remaining == 0:
        hist.pop((side, price), None)


def _levels(book: BookSnapshot):
    return (
        [p for p, _ in book.bids], [v for _, v in book.bids],
        [p for p, _ in book.asks], [v for _, v in book.asks],
    )


def compute_raw_features(
    event: MboEvent,
    book_before: BookSnapshot,
    history: PriceLevelHistory,
    mid: MidState,
    tick: int = TICK,
) -> FeatureVector:
    """Six raw features for ``event`` against the book immediately before it."""
    bp, bv, ap, av = _levels(book_before)
    out = _raw_features(
        event.time, int(event.side), event.price, bp, bv, ap, av, history.entries, mid.last_change_time, tick
    )
    if out is None:
        raise FeatureError(f"empty book side at t={event.time}")
    return FeatureVector(*map(float, out))


def update_history(
    event: MboEvent,
    book_before: BookSnapshot,
    book_after: BookSnapshot,
    history: PriceLevelHistory,
    mid: MidState,
) -> None:
    """Advance arrival-time and mid-price state past ``event``."""
    side = int(event.side)
    remaining = book_after.volume_at(event.side, event.price)
    _record(history.entries, int(event.event_type), side, event.price, event.time, remaining)
    new_mid = book_after.mid
    if new_mid != mid.current_mid:
        mid.current_mid = new_mid
        mid.last_change_time = event.time


# ---------------------------------------------------------------------------
# Whole-day streaming
# ---------------------------------------------------------------------------


@dataclass
class DayFeatures:
    """Featurised in-session events of one stock-day.

    ``best_bid``/``best_ask`` are the quotes just before each kept event (0 when
    the side is empty).  ``snap_time``/``snap_mid`` describe the mid after every
    raw event of the day (``-1`` when undefined) and feed the bucket returns;
    ``initial_mid`` is the mid before the first raw event.
    """

    events: EventFrame
    raw: np.ndarray
    ok: np.ndarray
    best_bid: np.ndarray
    best_ask: np.ndarray
    snap_time: np.ndarray
    snap_mid: np.ndarray
    initial_mid: int
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)


def featurize_day(
    events: EventFrame,
    books: np.ndarray | None = None,
    initial: BookSnapshot = EMPTY_BOOK,
    session: SessionConfig = SessionConfig(),
    tick: int = TICK,
) -> DayFeatures:
    """Stream a day's events through book state and compute raw features.

    Without ``books`` the book is rebuilt by replaying ``events`` from
    ``initial``.  With ``books`` (the normalised (n, 40) orderbook array aligned
    row-for-row with ``events``) the recorded states are used instead; the state
    before row 0 is ``initial``.

    Every event advances the history and mid state; only session-kept events are
    featurised.
    """
    n = len(events)
    keep = session.keep_mask(events)
    time, etype, _, size, price, side = events.columns()
    keep_l = keep.tolist()
    n_keep = int(keep.sum())

    raw = np.full((n_keep, 6), np.nan)
    best_bid = np.zeros(n_keep, dtype=np.int64)
    best_ask = np.zeros(n_keep, dtype=np.int64)
    snap_mid = np.full(n, -1, dtype=np.int64)

    hist: dict = {}
    initial_mid = initial.mid
    mid = initial_mid
    mid_time = time[0] if n else 0.0
    rows_out = []
    bb_out = []
    ba_out = []
    mids_out = []

    if books is None:
        ob = OrderBook(initial)
        bp, bv, ap, av = ob.bid_px, ob.bid_vol, ob.ask_px, ob.ask_vol
        apply = ob.apply
        for i in range(n):
            t = time[i]
            s = side[i]
            p = price[i]
            if keep_l[i]:
                bb_out.append(bp[0] if bp else 0)
                ba_out.append(ap[0] if ap else 0)
                rows_out.append(_raw_features(t, s, p, bp, bv, ap, av, hist, mid_time, tick))
            et = etype[i]
            apply(et, s, p, size[i])
            if et == 1:
                entry = hist.get((s, p))
                if entry is None:
                    hist[(s, p)] = [t, t]
                else:
                    entry[1] = t
            elif et == 2 or et == 3 or et == 4:
                if p not in (bp if s == 1 else ap):
                    hist.pop((s, p), None)
            new_mid = bp[0] + ap[0] if bp and ap else None
            if new_mid != mid:
                mid = new_mid
                mid_time = t
            mids_out.append(-1 if new_mid is None else new_mid)
    else:
        books = np.asarray(books, dtype=np.int64)
        if books.shape != (n, 4 * N_LEVELS):
            raise ValueError(f"books must have shape ({n}, {4 * N_LEVELS}), got {books.shape}")
        prev = _levels(initial)
        chunk = 50_000
        for c0 in range(0, n, chunk):
            block = books[c0:c0 + chunk].tolist()
            for j, row in enumerate(block):
                i = c0 + j
                t = time[i]
                s = side[i]
                p = price[i]
                bp, bv, ap, av = prev
                if keep_l[i]:
                    bb_out.append(bp[0] if bp else 0)
                    ba_out.append(ap[0] if ap else 0)
                    rows_out.append(_raw_features(t, s, p, bp, bv, ap, av, hist, mid_time, tick))
                cur = _row_levels(row)
                nbp, nbv, nap, nav = cur
                et = etype[i]
                if et == 1:
                    entry = hist.get((s, p))
                    if entry is None:
                        hist[(s, p)] = [t, t]
                    else:
                        entry[1] = t
                elif et == 2 or et == 3 or et == 4:
                    if p not in (nbp if s == 1 else nap):
                        hist.pop((s, p), None)
                new_mid = nbp[0] + nap[0] if nbp and nap else None
                if new_mid != mid:
                    mid = new_mid
                    mid_time = t
                mids_out.append(-1 if new_mid is None else new_mid)
                prev = cur

    failed = sum(r is None for r in rows_out)
    if n_keep:
        gap = (np.nan,) * 6
        raw[:] = [gap if r is None else r for r in rows_out]
    ok = ~np.isnan(raw[:, 0])
    if n_keep:
        best_bid[:] = bb_out
        best_ask[:] = ba_out
    if n:
        snap_mid[:] = mids_out
    return DayFeatures(
        events=events.take(keep),
        raw=raw,
        ok=ok,
        best_bid=best_bid,
        best_ask=best_ask,
        snap_time=events.time.copy(),
        snap_mid=snap_mid,
        initial_mid=-1 if initial_mid is None else initial_mid,
        diagnostics={"n_events": n, "n_kept": n_keep, "feature_errors": failed},
    )


def _row_levels(row: list):
    bp, bv, ap, av = [], [], [], []
    for i in range(0, len(row), 4):
        if row[i + 1] > 0:
            ap.append(row[i])
            av.append(row[i + 1])
        if row[i + 3] > 0:
            bp.append(row[i + 2])
            bv.append(row[i + 3])
    return bp, bv, ap, av


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


def rolling_normalize(raw: np.ndarray, w: int = DEFAULT_WINDOW, block: int = 4096) -> np.ndarray:
    """Trailing-window z-score of each column.

    Row ``k`` of the output standardises input row ``k + w - 1`` by the mean and
    population standard deviation of input rows ``k .. k + w - 1``.  A window
    with zero spread maps to 0.  Output has ``max(0, n - w + 1)`` rows.

    Window sums come from block-local cumulative sums of mean-shifted values;
    windows whose variance is too small for that to be accurate (including
    every flat window) are recomputed directly.
    """
    raw = np.asarray(raw, dtype=np.float64)
    squeeze = raw.ndim == 1
    if squeeze:
        raw = raw[:, None]
    if w < 1:
        raise ValueError("window must be >= 1")
    n, d = raw.shape
    if n < w:
        if n:
            logger.info("series of length %d shorter than window %d; no normalised rows", n, w)
        out = np.zeros((0, d))
        return out[:, 0] if squeeze else out
    m = n - w + 1
    out = np.empty((m, d))
    zero = np.zeros((1, d))
    for k0 in range(0, m, block):
        k1 = min(m, k0 + block)
        x = raw[k0:k1 + w - 1]
        y = x - x.mean(axis=0)
        c1 = np.concatenate([zero, np.cumsum(y, axis=0)])
        c2 = np.concatenate([zero, np.cumsum(y * y, axis=0)])
        mu = (c1[w:] - c1[:-w]) / w
        var = (c2[w:] - c2[:-w]) / w - mu * mu
        # a window is flat when no value differs from its predecessor inside it
        changes = np.concatenate([zero, np.cumsum(x[1:] != x[:-1], axis=0)])
        flat = changes[w - 1:] - changes[:len(changes) - w + 1] == 0
        # rounding in the sums is bounded by a few ulps of the block's total square
        unsafe = ~flat & (var * w <= 1e9 * 8 * np.finfo(float).eps * c2[-1])
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(flat, 0.0, (y[w - 1:] - mu) / np.sqrt(np.where(flat, 1.0, var)))
        rows, cols = np.nonzero(unsafe)
        if len(rows):
            z[rows, cols] = _exact_z(raw, rows + k0, cols, w)
        out[k0:k1] = z
    return out[:, 0] if squeeze else out


def _exact_z(raw: np.ndarray, rows: np.ndarray, cols: np.ndarray, w: int) -> np.ndarray:
    """Two-pass z-scores for selected (output row, column) pairs."""
    win = raw[rows[:, None] + np.arange(w), cols[:, None]]
    win = win - win[:, -1:]  # shift first: nearby values subtract exactly
    mu = win.mean(axis=1)
    dev = win - mu[:, None]
    std = np.sqrt((dev * dev).mean(axis=1))
    flat = win.max(axis=1) == win.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(flat | (std == 0), 0.0, dev[:, -1] / np.where(std == 0, 1.0, std))
