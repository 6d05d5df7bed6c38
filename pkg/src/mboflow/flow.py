"""Best-level order-flow imbalance in 30-minute buckets and bucket log returns."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .market_data import SESSION_END, SESSION_START, EventType, MboEvent, Side

BUCKET_SECONDS = 1800.0
N_BUCKETS = 13

CLUSTER_SCOPES = ("phi1", "phi2", "phi3", "phi_star")
EVENT_SCOPES = ("all", "add", "cancel", "trade")
MEASURES = ("size", "count")


class FlowTerm(IntEnum):
    NONE = 0
    L_B = 1
    D_B = 2
    M_B = 3
    L_A = 4
    D_A = 5
    M_A = 6


# OFI = L_b - D_b + M_b - L_a + D_a - M_a
TERM_SIGN = np.array([0, 1, -1, 1, -1, 1, -1], dtype=np.int64)
LEGACY_TERM_SIGN = np.array([0, 1, -1, -1, -1, 1, 1], dtype=np.int64)

_SCOPE_TERMS = {
    "all": (1, 2, 3, 4, 5, 6),
    "add": (1, 4),
    "cancel": (2, 5),
    "trade": (3, 6),
}


@dataclass(frozen=True)
class FlowContribution:
    term: FlowTerm
    size: int
    count: int


def classify_contribution(event: MboEvent, best_before: tuple) -> FlowContribution:
    """Which best-level OFI term, if any, ``event`` feeds.

    ``best_before`` is ``(b1, a1)``; ``None`` (or 0) marks an empty side.
    """
    b1, a1 = best_before
    term = classify_terms(
        np.array([int(event.event_type)]), np.array([int(event.side)]),
        np.array([event.price]), np.array([b1 or 0]), np.array([a1 or 0]),
    )[0]
    if term == 0:
        return FlowContribution(FlowTerm.NONE, 0, 0)
    return FlowContribution(FlowTerm(int(term)), int(event.size), 1)


def classify_terms(event_type, side, price, best_bid, best_ask) -> np.ndarray:
    """Vectorised term classification; a best of 0 means the side was empty.

    Adds count when at or better than the prevailing best (an add into an empty
    side counts); cancels and visible executions count only at exactly the best.
    """
    event_type = np.asarray(event_type)
    side = np.asarray(side)
    price = np.asarray(price)
    best_bid = np.asarray(best_bid)
    best_ask = np.asarray(best_ask)
    bid = side == int(Side.BID)
    ask = ~bid
    is_add = event_type == int(EventType.ADD)
    is_cancel = (event_type == int(EventType.PARTIAL_CANCEL)) | (event_type == int(EventType.DELETE))
    is_trade = event_type == int(EventType.EXEC_VISIBLE)
    at_bid = bid & (best_bid > 0) & (price == best_bid)
    at_ask = ask & (best_ask > 0) & (price == best_ask)
    add_bid = bid & is_add & ((best_bid == 0) | (price >= best_bid))
    add_ask = ask & is_add & ((best_ask == 0) | (price <= best_ask))

    terms = np.zeros(len(event_type), dtype=np.int8)
    terms[add_bid] = FlowTerm.L_B
    terms[at_bid & is_cancel] = FlowTerm.D_B
    terms[at_bid & is_trade] = FlowTerm.M_B
    terms[add_ask] = FlowTerm.L_A
    terms[at_ask & is_cancel] = FlowTerm.D_A
    terms[at_ask & is_trade] = FlowTerm.M_A
    return terms


def bucket_index(time, session_start: float = SESSION_START, session_end: float = SESSION_END):
    """1-based bucket of ``time``: ``(start + (i-1) 1800, start + i 1800]``, start itself in bucket 1."""
    scalar = np.ndim(time) == 0
    t = np.atleast_1d(np.asarray(time, dtype=np.float64))
    if np.any((t < session_start) | (t > session_end)) or np.any(~np.isfinite(t)):
        raise ValueError("time outside the trading session")
    idx = np.ceil((t - session_start) / BUCKET_SECONDS).astype(np.int64)
    idx = np.clip(idx, 1, N_BUCKETS)
    return int(idx[0]) if scalar else idx


def signed_terms(terms, sizes, measure: str, legacy_trade_sign: bool = False) -> np.ndarray:
    """Per-event signed contribution for ``measure`` ('size' or 'count')."""
    sign = (LEGACY_TERM_SIGN if legacy_trade_sign else TERM_SIGN)[np.asarray(terms, dtype=np.int64)]
    if measure == "size":
        return sign * np.asarray(sizes, dtype=np.int64)
    if measure == "count":
        return sign
    raise ValueError(f"unknown measure {measure!r}")


def aggregate_ofi(
    terms,
    sizes,
    buckets,
    labels=None,
    cluster_scope: str = "phi_star",
    event_scope: str = "all",
    measure: str = "size",
    legacy_trade_sign: bool = False,
    n_buckets: int = N_BUCKETS,
) -> np.ndarray:
    """Signed OFI per bucket (index 0 is bucket 1).

    ``labels`` are 0-based cluster indices (``phi1`` is 0); events with a
    negative label are unlabeled and are an error under a cluster scope.
    """
    terms = np.asarray(terms, dtype=np.int64)
    buckets = np.asarray(buckets, dtype=np.int64)
    contrib = signed_terms(terms, sizes, measure, legacy_trade_sign)
    mask = np.isin(terms, _SCOPE_TERMS[event_scope])
    if cluster_scope != "phi_star":
        if labels is None:
            raise ValueError("cluster scope requires labels")
        labels = np.asarray(labels)
        if np.any(labels < 0):
            raise ValueError("unlabeled event under a cluster scope")
        mask &= labels == CLUSTER_SCOPES.index(cluster_scope)
    if len(buckets) and (buckets.min() < 1 or buckets.max() > n_buckets):
        raise ValueError("bucket index out of range")
    return np.bincount(buckets[mask] - 1, weights=contrib[mask], minlength=n_buckets).astype(np.int64)


def ofi_cube(terms, sizes, buckets, labels, legacy_trade_sign: bool = False) -> np.ndarray:
    """All OFI series of a stock-day, shape (4 cluster scopes, 4 event scopes, 2 measures, 13)."""
    terms = np.asarray(terms, dtype=np.int64)
    buckets = np.asarray(buckets, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0):
        raise ValueError("every event must be labeled")
    out = np.zeros((len(CLUSTER_SCOPES), len(EVENT_SCOPES), len(MEASURES), N_BUCKETS), dtype=np.int64)
    for m, measure in enumerate(MEASURES):
        contrib = signed_terms(terms, sizes, measure, legacy_trade_sign)
        for e, scope in enumerate(EVENT_SCOPES):
            in_scope = np.isin(terms, _SCOPE_TERMS[scope])
            for c in range(3):
                sel = in_scope & (labels == c)
                out[c, e, m] = np.bincount(buckets[sel] - 1, weights=contrib[sel], minlength=N_BUCKETS)
            out[3, e, m] = out[:3, e, m].sum(axis=0)
    return out


@dataclass(frozen=True)
class BucketReturns:
    """Boundary mids ``m(t_0..t_13)`` and the three log-return families.

    ``conr`` has 13 entries (buckets 1..13); ``frnb`` and ``freb`` have 12
    (buckets 1..12).
    """

    mids: np.ndarray
    conr: np.ndarray
    frnb: np.ndarray
    freb: np.ndarray


def boundary_times(session_start: float = SESSION_START) -> np.ndarray:
    return session_start + BUCKET_SECONDS * np.arange(N_BUCKETS + 1)


def boundary_mids(snap_time, snap_mid, initial_mid: int = -1, session_start: float = SESSION_START) -> np.ndarray:
    """Mid at each bucket boundary from the last snapshot at or before it."""
    snap_time = np.asarray(snap_time, dtype=np.float64)
    snap_mid = np.asarray(snap_mid, dtype=np.int64)
    idx = np.searchsorted(snap_time, boundary_times(session_start), side="right") - 1
    mids = np.where(idx >= 0, snap_mid[np.maximum(idx, 0)] if len(snap_mid) else initial_mid, initial_mid)
    if np.any(mids <= 0):
        raise ValueError("no defined mid-price at or before a bucket boundary")
    return mids.astype(np.float64)


def compute_bucket_returns(mids) -> BucketReturns:
    """CONR/FRNB/FREB from the 14 boundary mids (any positive price unit)."""
    m = np.asarray(mids, dtype=np.float64)
    if m.shape != (N_BUCKETS + 1,):
        raise ValueError(f"expected {N_BUCKETS + 1} boundary mids")
    if np.any(m <= 0):
        raise ValueError("mid-prices must be positive")
    # log(b / a) as log1p((b - a) / a): differencing np.log(m) loses digits for small moves
    conr = np.log1p(np.diff(m) / m[:-1])
    frnb = conr[1:].copy()
    freb = np.log1p((m[N_BUCKETS] - m[1:N_BUCKETS]) / m[1:N_BUCKETS])
    return BucketReturns(m, conr, frnb, freb)
