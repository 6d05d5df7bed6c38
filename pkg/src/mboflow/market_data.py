"""LOBSTER-style message/orderbook parsing, session filtering and book replay.

Prices are integers in 1/10000 dollar units throughout.  The mid-price is kept
as ``a1 + b1`` (1/20000 dollar units) so that half-tick mids stay exact.
"""

from __future__ import annotations

import bisect
import io
import os
from dataclasses import dataclass, field
from enum import IntEnum
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np
import pandas as pd

N_LEVELS = 10
PRICE_SCALE = 10_000
TICK = 100  # $0.01 in price units
ASK_SENTINEL = 9_999_999_999
BID_SENTINEL = -9_999_999_999

SESSION_START = 34_200.0
SESSION_END = 57_600.0


class EventType(IntEnum):
    ADD = 1
    PARTIAL_CANCEL = 2
    DELETE = 3
    EXEC_VISIBLE = 4
    EXEC_HIDDEN = 5
    AUCTION = 6
    HALT = 7


class Side(IntEnum):
    """Side of the standing limit order; values match the LOBSTER direction field."""

    BID = 1
    ASK = -1


BOOK_REDUCING = (EventType.PARTIAL_CANCEL, EventType.DELETE, EventType.EXEC_VISIBLE)


class MessageFormatError(ValueError):
    """A message-file record could not be decoded."""

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class StreamOrderError(ValueError):
    """Event times are not non-decreasing."""


class BookFormatError(ValueError):
    """An orderbook record is malformed or violates the book invariants."""


class BookInconsistencyError(ValueError):
    """An event cannot be applied to the current book state."""


@dataclass(frozen=True, slots=True)
class MboEvent:
    time: float
    event_type: EventType
    order_id: int
    size: int
    price: int
    side: Side


# ---------------------------------------------------------------------------
# Event columns
# ---------------------------------------------------------------------------


@dataclass
class EventFrame(Sequence):
    """Column store for a day of events.

    Behaves as a read-only sequence of :class:`MboEvent` while keeping the
    columns as numpy arrays for vectorised work downstream.
    """

    time: np.ndarray
    event_type: np.ndarray
    order_id: np.ndarray
    size: np.ndarray
    price: np.ndarray
    side: np.ndarray
    rejected: list = field(default_factory=list)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event_type = np.asarray(self.event_type, dtype=np.int8)
        self.order_id = np.asarray(self.order_id, dtype=np.int64)
        self.size = np.asarray(self.size, dtype=np.int64)
        self.price = np.asarray(self.price, dtype=np.int64)
        self.side = np.asarray(self.side, dtype=np.int8)
        n = len(self.time)
        for name in ("event_type", "order_id", "size", "price", "side"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def empty(cls) -> "EventFrame":
        return cls(*(np.empty(0) for _ in range(6)))

    @classmethod
    def from_events(cls, events: Iterable[MboEvent]) -> "EventFrame":
        events = list(events)
        return cls(
            [e.time for e in events],
            [int(e.event_type) for e in events],
            [e.order_id for e in events],
            [e.size for e in events],
            [e.price for e in events],
            [int(e.side) for e in events],
        )

    def __len__(self) -> int:
        return len(self.time)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return MboEvent(
                float(self.time[idx]),
                EventType(int(self.event_type[idx])),
                int(self.order_id[idx]),
                int(self.size[idx]),
                int(self.price[idx]),
                Side(int(self.side[idx])),
            )
        return self.take(idx)

    def __iter__(self) -> Iterator[MboEvent]:
        for i in range(len(self)):
            yield self[i]

    def take(self, idx) -> "EventFrame":
        return EventFrame(
            self.time[idx], self.event_type[idx], self.order_id[idx],
            self.size[idx], self.price[idx], self.side[idx],
        )

    def columns(self) -> tuple[list, list, list, list, list, list]:
        """Plain python lists, for tight per-event loops."""
        return (
            self.time.tolist(), self.event_type.tolist(), self.order_id.tolist(),
            self.size.tolist(), self.price.tolist(), self.side.tolist(),
        )


# ---------------------------------------------------------------------------
# Message files
# ---------------------------------------------------------------------------

PathOrStream = Union[str, os.PathLike, IO[bytes], IO[str], bytes]


def _read_text(source: PathOrStream) -> str:
    if isinstance(source, bytes):
        return source.decode()
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode()
    data = source.read()
    return data.decode() if isinstance(data, bytes) else data


def _parse_message_row(row: int, line: str) -> tuple:
    parts = line.strip().split(",")
    if len(parts) != 6:
        raise MessageFormatError(row, f"expected 6 columns, got {len(parts)}")
    try:
        t = float(parts[0])
        etype, oid, size, price, direction = (int(p) for p in parts[1:])
    except ValueError as exc:
        raise MessageFormatError(row, str(exc)) from None
    if not np.isfinite(t) or t < 0:
        raise MessageFormatError(row, f"bad time {parts[0]!r}")
    if etype not in EventType._value2member_map_:
        raise MessageFormatError(row, f"unknown event type {etype}")
    if direction not in (1, -1):
        raise MessageFormatError(row, f"undefined direction {direction}")
    if size <= 0:
        raise MessageFormatError(row, f"non-positive size {size}")
    if price <= 0:
        raise MessageFormatError(row, f"non-positive price {price}")
    return t, etype, oid, size, price, direction


def _check_monotone(time: np.ndarray) -> None:
    if len(time) > 1:
        bad = np.flatnonzero(np.diff(time) < 0)
        if len(bad):
            i = int(bad[0]) + 1
            raise StreamOrderError(f"time decreases at row {i}: {time[i - 1]!r} -> {time[i]!r}")


def parse_message_file(source: PathOrStream, strict: bool = True) -> EventFrame:
    """Decode a 6-column LOBSTER message file.

    With ``strict=False`` undecodable rows are skipped and listed in
    ``frame.rejected`` as ``(row, reason)`` pairs instead of raising.
    """
    text = _read_text(source)
    if not text.strip():
        return EventFrame.empty()

    try:
        df = pd.read_csv(
            io.StringIO(text), header=None, float_precision="round_trip",
            dtype={0: np.float64, 1: np.int64, 2: np.int64, 3: np.int64, 4: np.int64, 5: np.int64},
        )
        ok = df.shape[1] == 6
    except (ValueError, pd.errors.ParserError):
        ok = False
    if ok:
        cols = [df[c].to_numpy() for c in range(6)]
        t, etype, _, size, price, direction = cols
        valid = (
            np.isin(etype, list(EventType._value2member_map_))
            & ((direction == 1) | (direction == -1))
            & (size > 0) & (price > 0) & np.isfinite(t) & (t >= 0)
        )
        if valid.all():
            frame = EventFrame(*cols)
            _check_monotone(frame.time)
            return frame

    # slow path: locate and report the offending rows
    records, rejected = [], []
    for row, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            records.append(_parse_message_row(row, line))
        except MessageFormatError as exc:
            if strict:
                raise
            rejected.append((exc.row, exc.reason))
    if records:
        frame = EventFrame(*zip(*records))
    else:
        frame = EventFrame.empty()
    frame.rejected = rejected
    _check_monotone(frame.time)
    return frame


def format_message_rows(events: EventFrame) -> str:
    """Serialise events back to the 6-column text form (9-decimal times)."""
    t, etype, oid, size, price, side = events.columns()
    return "".join(
        f"{t[i]:.9f},{etype[i]},{oid[i]},{size[i]},{price[i]},{side[i]}\n" for i in range(len(t))
    )


def write_message_file(path: Union[str, os.PathLike], events: EventFrame) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_message_rows(events))


# ---------------------------------------------------------------------------
# Book snapshots
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class BookSnapshot:
    """Top-of-book state: ``asks`` ascending and ``bids`` descending ``(price, volume)`` pairs."""

    asks: tuple = ()
    bids: tuple = ()
    time: float = float("nan")

    def __post_init__(self):
        asks, bids = tuple(map(tuple, self.asks)), tuple(map(tuple, self.bids))
        object.__setattr__(self, "asks", asks)
        object.__setattr__(self, "bids", bids)
        if len(asks) > N_LEVELS or len(bids) > N_LEVELS:
            raise BookFormatError("more than 10 levels on a side")
        for levels, sign, name in ((asks, 1, "ask"), (bids, -1, "bid")):
            for (p0, _), (p1, _) in zip(levels, levels[1:]):
                if sign * (p1 - p0) <= 0:
                    raise BookFormatError(f"{name} prices not strictly monotone")
            for p, v in levels:
                if v <= 0:
                    raise BookFormatError(f"{name} level {p} has non-positive volume {v}")
        if asks and bids and asks[0][0] <= bids[0][0]:
            raise BookFormatError(f"crossed book: ask {asks[0][0]} <= bid {bids[0][0]}")

    @property
    def best_bid(self):
        return self.bids[0][0] if self.bids else None

    @property
    def best_ask(self):
        return self.asks[0][0] if self.asks else None

    @property
    def spread(self):
        if not (self.asks and self.bids):
            return None
        return self.asks[0][0] - self.bids[0][0]

    @property
    def mid(self):
        """Mid-price in 1/20000 dollar units (``a1 + b1``)."""
        if not (self.asks and self.bids):
            return None
        return self.asks[0][0] + self.bids[0][0]

    @property
    def mid_price(self) -> float:
        m = self.mid
        return float("nan") if m is None else m / (2 * PRICE_SCALE)

    def volume_at(self, side: Side, price: int) -> int:
        for p, v in self.bids if side == Side.BID else self.asks:
            if p == price:
                return v
        return 0

    def state_vector(self) -> np.ndarray:
        """40-vector ``[a1, va1, b1, vb1, ..., a10, va10, b10, vb10]``; absent levels are 0."""
        row = np.zeros(4 * N_LEVELS, dtype=np.int64)
        for i, (p, v) in enumerate(self.asks):
            row[4 * i], row[4 * i + 1] = p, v
        for i, (p, v) in enumerate(self.bids):
            row[4 * i + 2], row[4 * i + 3] = p, v
        return row

    @classmethod
    def from_state_vector(cls, row, time: float = float("nan")) -> "BookSnapshot":
        row = [int(x) for x in row]
        if len(row) % 4:
            raise BookFormatError(f"expected a multiple of 4 columns, got {len(row)}")
        asks, bids = [], []
        for i in range(len(row) // 4):
            ap, av, bp, bv = row[4 * i: 4 * i + 4]
            if av > 0 and 0 < ap < ASK_SENTINEL:
                asks.append((ap, av))
            if bv > 0 and bp > 0:
                bids.append((bp, bv))
        return cls(tuple(asks), tuple(bids), time)


EMPTY_BOOK = BookSnapshot()


def parse_orderbook_row(record: Union[str, Sequence[int]], time: float = float("nan")) -> BookSnapshot:
    """Decode one 40-column orderbook row, dropping sentinel (unoccupied) levels."""
    if isinstance(record, str):
        parts = record.strip().split(",")
        try:
            values = [int(p) for p in parts]
        except ValueError as exc:
            raise BookFormatError(str(exc)) from None
    else:
        values = [int(p) for p in record]
    if len(values) != 4 * N_LEVELS:
        raise BookFormatError(f"expected {4 * N_LEVELS} columns, got {len(values)}")
    book = BookSnapshot.from_state_vector(values, time)
    if not book.asks and not book.bids:
        raise BookFormatError("empty book: every level is unoccupied")
    return book


def normalize_book_array(raw: np.ndarray) -> np.ndarray:
    """Map sentinel levels of an (n, 40) orderbook array to price 0 / volume 0."""
    arr = np.array(raw, dtype=np.int64, copy=True)
    ap, av = arr[:, 0::4], arr[:, 1::4]
    bp, bv = arr[:, 2::4], arr[:, 3::4]
    absent_a = (av <= 0) | (ap <= 0) | (ap >= ASK_SENTINEL)
    absent_b = (bv <= 0) | (bp <= 0)
    ap[absent_a] = 0
    av[absent_a] = 0
    bp[absent_b] = 0
    bv[absent_b] = 0
    return arr


def validate_book_array(arr: np.ndarray) -> None:
    """Vectorised invariant check on a normalised (n, 40) array."""
    ap, av, bp, bv = arr[:, 0::4], arr[:, 1::4], arr[:, 2::4], arr[:, 3::4]
    both = (av[:, 0] > 0) & (bv[:, 0] > 0)
    crossed = both & (ap[:, 0] <= bp[:, 0])
    if crossed.any():
        i = int(np.flatnonzero(crossed)[0])
        raise BookFormatError(f"row {i}: crossed book")
    for px, vol, sign, name in ((ap, av, 1, "ask"), (bp, bv, -1, "bid")):
        pres = vol > 0
        # occupied levels must be a prefix and strictly monotone
        gap = ~pres[:, :-1] & pres[:, 1:]
        nonmono = pres[:, 1:] & (sign * (px[:, 1:] - px[:, :-1]) <= 0)
        bad = (gap | nonmono).any(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise BookFormatError(f"row {i}: {name} levels not strictly monotone")


def parse_orderbook_file(source: PathOrStream, validate: bool = True) -> np.ndarray:
    """Read an orderbook file into a normalised (n, 40) int64 array."""
    text = _read_text(source)
    if not text.strip():
        return np.zeros((0, 4 * N_LEVELS), dtype=np.int64)
    df = pd.read_csv(io.StringIO(text), header=None, dtype=np.int64)
    if df.shape[1] != 4 * N_LEVELS:
        raise BookFormatError(f"expected {4 * N_LEVELS} columns, got {df.shape[1]}")
    arr = normalize_book_array(df.to_numpy())
    if validate:
        validate_book_array(arr)
    return arr


def format_orderbook_rows(arr: np.ndarray) -> str:
    """Serialise a normalised (n, 40) array, restoring the source sentinels."""
    out = np.array(arr, dtype=np.int64, copy=True)
    ap, av, bp, bv = out[:, 0::4], out[:, 1::4], out[:, 2::4], out[:, 3::4]
    ap[av <= 0] = ASK_SENTINEL
    bp[bv <= 0] = BID_SENTINEL
    buf = io.StringIO()
    np.savetxt(buf, out, fmt="%d", delimiter=",")
    return buf.getvalue()


def write_orderbook_file(path: Union[str, os.PathLike], arr: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_orderbook_rows(arr))


# ---------------------------------------------------------------------------
# Session filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    session_start: float = SESSION_START
    session_end: float = SESSION_END
    excluded_event_types: frozenset = frozenset({EventType.AUCTION, EventType.HALT})
    include_hidden_executions: bool = False

    def __post_init__(self):
        if self.session_end <= self.session_start:
            raise ValueError("session_end must follow session_start")

    def keep_mask(self, events: EventFrame) -> np.ndarray:
        excluded = {int(e) for e in self.excluded_event_types}
        if not self.include_hidden_executions:
            excluded.add(int(EventType.EXEC_HIDDEN))
        return (
            (events.time >= self.session_start)
            & (events.time <= self.session_end)
            & ~np.isin(events.event_type, sorted(excluded))
        )


def filter_session(events, config: SessionConfig = SessionConfig()):
    """Keep in-session events whose type is not excluded; order is preserved."""
    if isinstance(events, EventFrame):
        return events.take(config.keep_mask(events))
    frame = EventFrame.from_events(events)
    mask = config.keep_mask(frame)
    return [e for e, keep in zip(events, mask) if keep]


# ---------------------------------------------------------------------------
# Book replay
# ---------------------------------------------------------------------------


class OrderBook:
    """Mutable 10-level book used for event-by-event replay.

    ``bid_px`` is kept descending and ``ask_px`` ascending, with volumes in the
    parallel lists ``bid_vol``/``ask_vol``.
    """

    __slots__ = ("bid_px", "bid_vol", "ask_px", "ask_vol", "depth")

    def __init__(self, book: BookSnapshot = EMPTY_BOOK, depth: int = N_LEVELS):
        self.bid_px = [p for p, _ in book.bids]
        self.bid_vol = [v for _, v in book.bids]
        self.ask_px = [p for p, _ in book.asks]
        self.ask_vol = [v for _, v in book.asks]
        self.depth = depth

    def copy(self) -> "OrderBook":
        other = OrderBook.__new__(OrderBook)
        other.bid_px, other.bid_vol = list(self.bid_px), list(self.bid_vol)
        other.ask_px, other.ask_vol = list(self.ask_px), list(self.ask_vol)
        other.depth = self.depth
        return other

    @property
    def mid(self):
        if self.bid_px and self.ask_px:
            return self.bid_px[0] + self.ask_px[0]
        return None

    def snapshot(self, time: float = float("nan")) -> BookSnapshot:
        return BookSnapshot(
            tuple(zip(self.ask_px, self.ask_vol)), tuple(zip(self.bid_px, self.bid_vol)), time,
        )

    def state_row(self) -> list:
        row = [0] * (4 * self.depth)
        for i, (p, v) in enumerate(zip(self.ask_px, self.ask_vol)):
            row[4 * i] = p
            row[4 * i + 1] = v
        for i, (p, v) in enumerate(zip(self.bid_px, self.bid_vol)):
            row[4 * i + 2] = p
            row[4 * i + 3] = v
        return row

    def apply(self, event_type: int, side: int, price: int, size: int) -> None:
        if event_type == 1:
            self._add(side, price, size)
        elif event_type in (2, 3, 4):
            self._reduce(side, price, size)
        # hidden executions, auctions and halts leave the visible book unchanged

    def _add(self, side: int, price: int, size: int) -> None:
        if side == 1:
            if self.ask_px and price >= self.ask_px[0]:
                raise BookInconsistencyError(f"bid add at {price} crosses best ask {self.ask_px[0]}")
            px, vol = self.bid_px, self.bid_vol
            i = _index_desc(px, price)
        else:
            if self.bid_px and price <= self.bid_px[0]:
                raise BookInconsistencyError(f"ask add at {price} crosses best bid {self.bid_px[0]}")
            px, vol = self.ask_px, self.ask_vol
            i = bisect.bisect_left(px, price)
        if i < len(px) and px[i] == price:
            vol[i] += size
            return
        px.insert(i, price)
        vol.insert(i, size)
        if len(px) > self.depth:
            px.pop()
            vol.pop()

    def _reduce(self, side: int, price: int, size: int) -> None:
        px, vol = (self.bid_px, self.bid_vol) if side == 1 else (self.ask_px, self.ask_vol)
        try:
            i = px.index(price)
        except ValueError:
            raise BookInconsistencyError(f"no resting volume at {price} on side {side}") from None
        if size > vol[i]:
            raise BookInconsistencyError(
                f"reduction of {size} exceeds resting volume {vol[i]} at {price} on side {side}"
            )
        vol[i] -= size
        if vol[i] == 0:
            del px[i]
            del vol[i]


def _index_desc(px: list, price: int) -> int:
    # linear scan; at most ``depth`` levels
    i = 0
    n = len(px)
    while i < n and px[i] > price:
        i += 1
    return i


def apply_event(book: BookSnapshot, event: MboEvent) -> BookSnapshot:
    """Return the snapshot obtained by applying ``event`` to ``book``."""
    ob = OrderBook(book)
    ob.apply(int(event.event_type), int(event.side), event.price, event.size)
    return ob.snapshot(event.time)


def replay(events: EventFrame, initial: BookSnapshot = EMPTY_BOOK) -> np.ndarray:
    """Replay events and return the (n, 40) state after each event."""
    ob = OrderBook(initial)
    _, etype, _, size, price, side = events.columns()
    rows = np.zeros((len(events), 4 * N_LEVELS), dtype=np.int64)
    for i in range(len(etype)):
        ob.apply(etype[i], side[i], price[i], size[i])
        rows[i] = ob.state_row()
    return rows
