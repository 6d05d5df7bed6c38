import datetime as dt

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from mboflow.clustering import kmeans_fit
from mboflow.features import featurize_day, rolling_normalize
from mboflow.flow import aggregate_ofi, boundary_mids, bucket_index, classify_terms, compute_bucket_returns
from mboflow.market_data import EventFrame, parse_message_file, parse_orderbook_file
from mboflow.synth import (
    OPPORTUNISTIC,
    SynthConfig,
    generate_day,
    read_truth,
    replay_check,
    trading_dates,
    truth_path,
    write_day,
)


def planted_flow(day, measure="size"):
    """Opportunistic OFI per bucket and the day's returns, using the ground-truth labels."""
    f = featurize_day(day.events)
    ev = f.events
    labels = day.truth.labels[day.events.time >= 34_200]
    terms = classify_terms(ev.event_type, ev.side, ev.price, f.best_bid, f.best_ask)
    ofi = aggregate_ofi(terms, ev.size, bucket_index(ev.time), labels, f"phi{OPPORTUNISTIC + 1}", "all", measure)
    returns = compute_bucket_returns(boundary_mids(f.snap_time, f.snap_mid, f.initial_mid))
    return ofi, returns


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(weights=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SynthConfig(kappa=1.5)
    with pytest.raises(ValueError):
        SynthConfig(events_per_day=50, window=100)


def test_generator_output_replays_exactly():
    for seed in range(3):
        day = generate_day(SynthConfig(seed=seed), seed)
        assert replay_check(day.events, day.snapshots)
        assert len(day.truth.labels) == len(day.events)


def test_replay_check_detects_perturbation():
    day = generate_day(SynthConfig(seed=1), 0)
    bad = day.snapshots.copy()
    bad[len(bad) // 2, 1] += 100
    assert not replay_check(day.events, bad)
    assert replay_check(EventFrame.empty(), np.zeros((0, 40)))


def test_same_seed_same_stream():
    a = generate_day(SynthConfig(seed=4), 3, stock_index=2)
    b = generate_day(SynthConfig(seed=4), 3, stock_index=2)
    c = generate_day(SynthConfig(seed=4), 3, stock_index=1)
    assert all(np.array_equal(x, y) for x, y in zip(a.events.columns(), b.events.columns()))
    assert not np.array_equal(a.events.price, c.events.price)


def test_kappa_one_matches_drift_every_bucket():
    cfg = SynthConfig(seed=3, kappa=1.0)
    for k in range(10):
        day = generate_day(cfg, k)
        ofi, _ = planted_flow(day)
        assert np.array_equal(np.sign(ofi[:12]), day.truth.drifts[1:])


def test_kappa_zero_has_no_link():
    cfg = SynthConfig(seed=3, kappa=0.0)
    xs, ys = [], []
    for k in range(60):
        ofi, r = planted_flow(generate_day(cfg, k))
        xs += list(ofi[:12])
        ys += list(r.frnb)
    assert abs(np.corrcoef(xs, ys)[0, 1]) <= 0.1


def test_drift_sets_next_bucket_return_sign():
    day = generate_day(SynthConfig(seed=8), 0)
    _, r = planted_flow(day)
    assert np.array_equal(np.sign(r.conr), day.truth.drifts)


def test_unit_size_mode():
    day = generate_day(SynthConfig(seed=2, unit_size=True), 0)
    assert set(day.events.size.tolist()) == {100}
    assert replay_check(day.events, day.snapshots)


def test_planted_archetypes_are_recoverable():
    cfg = SynthConfig(seed=1, separation=10.0)
    raws, labs = [], []
    for k in range(10):
        day = generate_day(cfg, k, snapshots=False)
        f = featurize_day(day.events)
        raws.append(f.raw[f.ok])
        labs.append(day.truth.labels[day.events.time >= 34_200][f.ok])
    z = rolling_normalize(np.vstack(raws), 100)
    truth = np.concatenate(labs)[99:]
    _, labels = kmeans_fit(z, 3, rng_seed=0, n_init=10)
    assert adjusted_rand_score(truth, labels) >= 0.9


def test_files_round_trip(tmp_path):
    day = generate_day(SynthConfig(seed=6), 0)
    msg, book, tp = write_day(tmp_path, "XYZ", "2021-01-04", day)
    ev = parse_message_file(msg)
    assert np.array_equal(ev.time, day.events.time) and np.array_equal(ev.price, day.events.price)
    assert np.array_equal(parse_orderbook_file(book), day.snapshots)
    truth = read_truth(truth_path(tmp_path, "XYZ", "2021-01-04"))
    assert np.array_equal(truth["labels"], day.truth.labels)
    assert list(truth["rows"][0]) == ["event_index", "archetype", "day", "bucket", "bucket_drift",
                                      "opportunistic_sign"]


def test_trading_dates_skip_weekends():
    d = trading_dates(6, dt.date(2021, 1, 1))
    assert all(x.weekday() < 5 for x in d) and d[0] == dt.date(2021, 1, 1) and d[1] == dt.date(2021, 1, 4)
