import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score

from mboflow.clustering import (
    ClusterModel,
    base_initialize,
    cluster_name,
    kmeans_fit,
    kmeanspp_init,
    permute_model,
    predict,
)


def blobs(seed, n=3000, dim=6, sep=10.0, centers=None, weights=(0.3, 0.2, 0.5)):
    """Gaussian blobs with unit spread whose centres sit ``sep`` apart."""
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = np.zeros((3, dim))
        centers[1, 0] = sep
        centers[2, 1] = sep
    labels = rng.choice(len(centers), size=n, p=weights)
    return centers[labels] + rng.standard_normal((n, dim)), labels


def matched_accuracy(truth, labels):
    c = np.zeros((3, 3))
    np.add.at(c, (truth, labels), 1)
    r, k = linear_sum_assignment(-c)
    return c[r, k].sum() / len(truth), dict(zip(k.tolist(), r.tolist()))


def test_init_on_three_distinct_points():
    pts = np.array([[0.0] * 6, [1.0] * 6, [9.0] * 6])
    for seed in range(20):
        c = kmeanspp_init(pts, 3, seed)
        assert sorted(map(tuple, c)) == sorted(map(tuple, pts))


def test_init_k1_and_errors():
    pts = np.arange(12.0).reshape(6, 2)
    c = kmeanspp_init(pts, 1, 0)
    assert any(np.array_equal(c[0], p) for p in pts)
    with pytest.raises(ValueError):
        kmeanspp_init(np.ones((5, 2)), 2, 0)


def test_init_hits_both_far_blobs():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 2))
    b = rng.standard_normal((50, 2)) + 1000.0
    pts = np.vstack([a, b])
    hits = 0
    for seed in range(1000):
        c = kmeanspp_init(pts, 2, seed)
        hits += (c[:, 0] > 500).sum() == 1
    assert hits / 1000 >= 0.99


def test_init_is_deterministic():
    x, _ = blobs(1)
    assert np.array_equal(kmeanspp_init(x, 3, 42), kmeanspp_init(x, 3, 42))


def test_fit_examples():
    pts = np.array([[0.0] * 6, [1.0] * 6, [9.0] * 6] * 4)
    model, _ = kmeans_fit(pts, 3, rng_seed=0)
    assert model.inertia == 0.0
    assert sorted(map(tuple, model.centroids)) == sorted({tuple(p) for p in pts})

    x = np.zeros((4, 6))
    x[:, 0] = [0, 0.1, 10, 10.1]
    model, labels = kmeans_fit(x, 2, rng_seed=3)
    assert sorted(model.centroids[:, 0]) == pytest.approx([0.05, 10.05])

    one, lab = kmeans_fit(np.ones((1, 6)), 1, rng_seed=0)
    assert one.inertia == 0 and np.array_equal(one.centroids[0], np.ones(6)) and lab.tolist() == [0]


def test_fit_rejects_non_finite():
    x = np.zeros((5, 2))
    x[0, 0] = np.nan
    with pytest.raises(ValueError):
        kmeans_fit(x, 2, rng_seed=0)


def test_inertia_never_increases():
    for seed in range(10):
        x, _ = blobs(seed, sep=2.0)
        model, _ = kmeans_fit(x, 3, rng_seed=seed, tol=0.0)
        h = np.array(model.inertia_history)
        assert np.all(np.diff(h) <= 1e-9 * h[0])


def test_fit_is_deterministic():
    x, _ = blobs(2, sep=3.0)
    m1, l1 = kmeans_fit(x, 3, rng_seed=9, n_init=3)
    m2, l2 = kmeans_fit(x, 3, rng_seed=9, n_init=3)
    assert np.array_equal(m1.centroids, m2.centroids) and np.array_equal(l1, l2)


def test_planted_recovery():
    x, truth = blobs(5, n=30_000, sep=10.0)
    _, labels = kmeans_fit(x, 3, rng_seed=0, n_init=10)
    assert adjusted_rand_score(truth, labels) >= 0.9


def test_restarts_never_worse_than_first_run():
    x, _ = blobs(6, sep=2.5)
    single, _ = kmeans_fit(x, 3, rng_seed=4)
    multi, _ = kmeans_fit(x, 3, rng_seed=4, n_init=5)
    assert multi.inertia <= single.inertia


def test_empty_cluster_is_reseeded():
    x = np.array([[0.0], [0.1], [10.0], [10.1]])
    init = np.array([[0.05], [10.05], [1000.0]])
    model, labels = kmeans_fit(x, 3, init=init)
    assert len(np.unique(model.centroids, axis=0)) == 3
    assert set(labels.tolist()) == {0, 1, 2}


def test_base_initialization_fixed_point():
    x, _ = blobs(7)
    ref, labels = kmeans_fit(x, 3, rng_seed=1)
    again, labels2 = base_initialize(ref, x)
    assert np.allclose(again.centroids, ref.centroids) and np.array_equal(labels, labels2)
    assert again.iterations_run == 1
    with pytest.raises(ValueError):
        base_initialize(ref, np.zeros((5, 2)))


def test_base_initialization_keeps_indices_across_mirrored_stocks():
    centers = np.array([[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]])
    xa, ta = blobs(10, dim=2, centers=centers)
    xb, tb = blobs(11, dim=2, centers=centers[:, ::-1] + 0.5)
    ref, la = kmeans_fit(xa, 3, rng_seed=0, n_init=5)
    _, mapping = matched_accuracy(ta, la)
    # stock B's blobs are stock A's reflected across the diagonal: archetype 1 sits where A's 2 was
    mirrored = np.array([0, 2, 1])[tb]
    _, lb = base_initialize(ref, xb)
    acc = np.mean(np.array([mapping[k] for k in lb.tolist()]) == mirrored)
    assert acc >= 0.99


def test_predict_examples():
    model = ClusterModel(np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]]), 0.0, 1)
    assert predict(model, [[2.0, 0.0]]).tolist() == [1]
    assert predict(model, [[2.0, 0.0], [3.0, 0.0]]).tolist() == [1, 1]  # equidistant from 1 and 2 -> 1
    tie = ClusterModel(np.array([[-1.0], [5.0], [1.0]]), 0.0, 1)
    assert predict(tie, [[0.0]]).tolist() == [0]


def test_predict_reproduces_fit_labels():
    x, _ = blobs(12)
    model, labels = kmeans_fit(x, 3, rng_seed=2)
    assert np.array_equal(predict(model, x), labels)
    assert np.array_equal(predict(model, x), predict(model, x))


def test_model_json_round_trip(tmp_path):
    x, _ = blobs(13)
    model, _ = kmeans_fit(x, 3, rng_seed=2, subsample=1000)
    path = tmp_path / "m.json"
    model.save(path)
    back = ClusterModel.load(path)
    assert np.array_equal(back.centroids, model.centroids) and back.subsample == 1000
    assert list(model.to_dict()) == ["version", "K", "dim", "centroids", "seed", "inertia", "iterations_run",
                                     "subsample"]
    assert back.to_json() == model.to_json()


def test_permute_and_names():
    model = ClusterModel(np.array([[0.0], [1.0], [2.0]]), 0.0, 1)
    assert permute_model(model, [2, 0, 1]).centroids[:, 0].tolist() == [2.0, 0.0, 1.0]
    assert cluster_name(0) == "phi1"
    with pytest.raises(ValueError):
        permute_model(model, [0, 0, 1])
