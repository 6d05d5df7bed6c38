import math

import numpy as np
import pytest

from mboflow.features import featurize_day
from mboflow.flow import (
    EVENT_SCOPES,
    FlowContribution,
    FlowTerm,
    aggregate_ofi,
    boundary_mids,
    bucket_index,
    classify_contribution,
    classify_terms,
    compute_bucket_returns,
    ofi_cube,
)
from mboflow.market_data import EventFrame, EventType, MboEvent, Side, replay

from oracles import oracle_snapshot_ofi

B1, A1 = 1_000_000, 1_000_100


def _ev(etype, side, price, size=100):
    return MboEvent(40_000.0, etype, 0, size, price, side)


def test_classify_examples():
    assert classify_contribution(_ev(EventType.ADD, Side.BID, B1), (B1, A1)) == FlowContribution(FlowTerm.L_B, 100, 1)
    assert classify_contribution(_ev(EventType.ADD, Side.BID, B1 - 100), (B1, A1)).term == FlowTerm.NONE
    assert classify_contribution(_ev(EventType.ADD, Side.ASK, B1 + 50), (B1, A1)).term == FlowTerm.L_A
    assert classify_contribution(_ev(EventType.DELETE, Side.ASK, A1), (B1, A1)).term == FlowTerm.D_A
    assert classify_contribution(_ev(EventType.PARTIAL_CANCEL, Side.ASK, A1 + 100), (B1, A1)).term == FlowTerm.NONE
    assert classify_contribution(_ev(EventType.EXEC_VISIBLE, Side.BID, B1), (B1, A1)).term == FlowTerm.M_B
    assert classify_contribution(_ev(EventType.EXEC_HIDDEN, Side.BID, B1), (B1, A1)).term == FlowTerm.NONE
    none = classify_contribution(_ev(EventType.ADD, Side.BID, 1), (B1, A1))
    assert none.size == 0 and none.count == 0


def test_add_into_empty_side_counts():
    assert classify_contribution(_ev(EventType.ADD, Side.ASK, A1), (B1, None)).term == FlowTerm.L_A


def test_bucket_index_examples():
    assert bucket_index(34_210) == 1
    assert bucket_index(36_000) == 1
    assert bucket_index(34_200) == 1
    assert bucket_index(57_600) == 13
    assert bucket_index(36_000.000000001) == 2
    with pytest.raises(ValueError):
        bucket_index(34_100)


def test_aggregate_example():
    terms = classify_terms([1, 1, 3], [1, 1, -1], [B1, B1, A1], [B1] * 3, [A1] * 3)
    buckets = [1, 1, 1]
    sizes = [100, 50, 30]
    assert aggregate_ofi(terms, sizes, buckets)[0] == 180
    assert aggregate_ofi(terms, sizes, buckets, measure="count")[0] == 3
    assert aggregate_ofi(terms, sizes, buckets)[1] == 0


def test_cluster_scope_needs_labels():
    with pytest.raises(ValueError):
        aggregate_ofi([1], [100], [1], cluster_scope="phi1")
    with pytest.raises(ValueError):
        aggregate_ofi([1], [100], [1], labels=[-1], cluster_scope="phi1")


def _day_terms(ev):
    f = featurize_day(ev)
    e = f.events
    terms = classify_terms(e.event_type, e.side, e.price, f.best_bid, f.best_ask)
    return terms, e.size, bucket_index(e.time)


def test_identities_on_random_streams(stream_factory):
    rng = np.random.default_rng(0)
    for seed in range(10):
        terms, sizes, buckets = _day_terms(stream_factory(seed, n=600, start=34_200.0 + 1800 * (seed % 12)))
        labels = rng.integers(0, 3, size=len(terms))
        cube = ofi_cube(terms, sizes, buckets, labels)
        # all = add + cancel + trade, phi_star = sum of clusters
        assert np.array_equal(cube[:, 0], cube[:, 1] + cube[:, 2] + cube[:, 3])
        assert np.array_equal(cube[3], cube[:3].sum(axis=0))
        for e, scope in enumerate(EVENT_SCOPES):
            assert np.array_equal(cube[3, e, 0], aggregate_ofi(terms, sizes, buckets, event_scope=scope))
            assert np.array_equal(cube[1, e, 1], aggregate_ofi(terms, sizes, buckets, labels, "phi2", scope, "count"))


def test_unit_size_identity(stream_factory):
    terms, sizes, buckets = _day_terms(stream_factory(4, n=600, unit_size=True))
    labels = np.zeros(len(terms), dtype=int)
    cube = ofi_cube(terms, sizes, buckets, labels)
    assert np.array_equal(cube[:, :, 0], cube[:, :, 1] * 100)


def test_legacy_trade_sign_flips_only_trades(stream_factory):
    terms, sizes, buckets = _day_terms(stream_factory(8, n=600))
    lit = aggregate_ofi(terms, sizes, buckets, event_scope="trade")
    legacy = aggregate_ofi(terms, sizes, buckets, event_scope="trade", legacy_trade_sign=True)
    assert np.array_equal(lit, -legacy)
    assert np.array_equal(aggregate_ofi(terms, sizes, buckets, event_scope="add"),
                          aggregate_ofi(terms, sizes, buckets, event_scope="add", legacy_trade_sign=True))


def _static_best_stream(seed, n=400):
    """Events that never move the best prices: activity at b1/a1 that keeps them populated, plus deep adds."""
    rng = np.random.default_rng(seed)
    rows = [(34_000.0, 1, 0, 1000, B1, 1), (34_000.0, 1, 1, 1000, A1, -1)]
    vol = {1: 1000, -1: 1000}
    t = 34_200.0
    for i in range(n):
        t += 1.0
        side = 1 if rng.random() < 0.5 else -1
        best = B1 if side == 1 else A1
        u = rng.random()
        if u < 0.4:
            rows.append((t, 1, i + 2, 100, best, side))
            vol[side] += 100
        elif u < 0.6 and vol[side] > 200:
            rows.append((t, 2, i + 2, 100, best, side))
            vol[side] -= 100
        elif u < 0.8 and vol[side] > 200:
            rows.append((t, 4, i + 2, 100, best, side))
            vol[side] -= 100
        else:
            rows.append((t, 1, i + 2, 100, best - side * 300, side))
    return EventFrame(*zip(*rows))


def test_snapshot_difference_oracle():
    for seed in range(5):
        ev = _static_best_stream(seed)
        states = replay(ev)
        before = np.vstack([np.zeros((1, 40), dtype=np.int64), states[:-1]])
        terms, sizes, buckets = _day_terms(ev)
        keep = ev.time >= 34_200
        want = oracle_snapshot_ofi(before[keep], states[keep], ev.event_type[keep], ev.side[keep],
                                   ev.price[keep], ev.size[keep])
        assert aggregate_ofi(terms, sizes, buckets).sum() == want


def test_return_examples():
    mids = np.full(14, 100.0)
    mids[1:] = 101.0
    r = compute_bucket_returns(mids)
    assert r.conr[0] == pytest.approx(math.log(1.01), abs=1e-15)
    flat = compute_bucket_returns(np.full(14, 5.0))
    assert not flat.conr.any() and not flat.frnb.any() and not flat.freb.any()
    assert len(r.conr) == 13 and len(r.frnb) == 12 and len(r.freb) == 12


def test_return_identities():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, 14)))
        r = compute_bucket_returns(m)
        assert r.freb[11] == r.frnb[11]
        assert r.conr.sum() == pytest.approx(math.log(m[13] / m[0]), rel=1e-12)


def test_boundary_mids_use_last_snapshot_at_or_before():
    t = np.array([34_000.0, 36_000.0, 36_500.0])
    m = np.array([10, 20, 30])
    mids = boundary_mids(t, m)
    assert mids[0] == 10 and mids[1] == 20 and mids[2] == 30
    with pytest.raises(ValueError):
        boundary_mids(np.array([35_000.0]), np.array([10]))
