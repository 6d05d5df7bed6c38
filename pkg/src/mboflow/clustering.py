"""K-means++ with reference-centroid initialisation for cross-stock label consistency.

Labels are 0-based internally (cluster ``phi1`` is label 0); exports render
them as ``phi1..phiK``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
DEFAULT_K = 3
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 300
_CHUNK = 65_536


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    seed: int | None = None
    subsample: int | None = None
    inertia_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centroids must be a non-empty (K, dim) array")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "K": self.K,
            "dim": self.dim,
            "centroids": self.centroids.tolist(),
            "seed": self.seed,
            "inertia": float(self.inertia),
            "iterations_run": int(self.iterations_run),
            "subsample": self.subsample,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        c = np.asarray(d["centroids"], dtype=np.float64)
        if c.shape != (d["K"], d["dim"]):
            raise ValueError("centroid array does not match K/dim")
        return cls(c, d["inertia"], d["iterations_run"], d.get("seed"), d.get("subsample"))

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ClusterModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _check_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("points contain non-finite values")
    return x


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distances (n, K); direct differences for exactness over speed tricks."""
    out = np.empty((x.shape[0], c.shape[0]))
    for k in range(c.shape[0]):
        d = x - c[k]
        out[:, k] = np.einsum("ij,ij->i", d, d)
    return out


def _assign(x: np.ndarray, c: np.ndarray):
    labels = np.empty(x.shape[0], dtype=np.int64)
    dmin = np.empty(x.shape[0])
    for s in range(0, x.shape[0], _CHUNK):
        d = _sq_dist(x[s:s + _CHUNK], c)
        lab = d.argmin(axis=1)  # first minimum: lowest index wins ties
        labels[s:s + _CHUNK] = lab
        dmin[s:s + _CHUNK] = d[np.arange(len(lab)), lab]
    return labels, dmin


def kmeanspp_init(points, K: int, rng_seed=None) -> np.ndarray:
    """D^2 seeding: first centre uniform, later centres with probability proportional to squared distance."""
    x = _check_points(points)
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(np.unique(x, axis=0)) < K:
        raise ValueError(f"need at least {K} distinct points")
    rng = np.random.default_rng(rng_seed)
    n = x.shape[0]
    centers = np.empty((K, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = _sq_dist(x, centers[:1])[:, 0]
    for k in range(1, K):
        cum = np.cumsum(d2)
        r = rng.random() * cum[-1]
        idx = int(np.searchsorted(cum, r, side="right"))
        idx = min(idx, n - 1)
        while d2[idx] == 0:  # guard against float edge cases landing on a chosen point
            idx = (idx + 1) % n
        centers[k] = x[idx]
        d2 = np.minimum(d2, _sq_dist(x, centers[k:k + 1])[:, 0])
    return centers


def kmeans_fit(
    points,
    K: int = DEFAULT_K,
    init=None,
    rng_seed=None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    subsample: int | None = None,
    n_init: int = 1,
) -> tuple[ClusterModel, np.ndarray]:
    """Lloyd iterations from ``init`` centroids (or K-means++ seeding).

    Returns the model and the labels of ``points``.  The model's
    ``inertia_history`` holds the inertia of each assignment step, which is
    non-increasing.  With ``n_init > 1`` and no ``init``, the seeding is
    repeated and the run with the lowest final inertia is kept; the first run
    uses ``rng_seed`` itself, so ``n_init=1`` is a single plain run.
    """
    x = _check_points(points)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    fit_x = x
    if subsample is not None and subsample < len(x):
        rng = np.random.default_rng(rng_seed)
        fit_x = x[np.sort(rng.choice(len(x), size=subsample, replace=False))]
    if init is not None:
        c = np.array(init, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != x.shape[1]:
            raise ValueError(f"init centroids must have shape (K, {x.shape[1]})")
        c, inertia, it, history = _lloyd(fit_x, c, max_iter, tol)
    else:
        seeds = [rng_seed]
        if n_init > 1:
            seeds += np.random.SeedSequence(rng_seed).spawn(n_init - 1)
        best = None
        for s in seeds:
            run = _lloyd(fit_x, kmeanspp_init(fit_x, K, s), max_iter, tol)
            if best is None or run[1] < best[1]:
                best = run
        c, inertia, it, history = best
    labels, _ = _assign(x, c)
    model = ClusterModel(c, inertia, it, rng_seed, subsample, tuple(history))
    return model, labels


def _lloyd(fit_x: np.ndarray, c: np.ndarray, max_iter: int, tol: float):
    K = c.shape[0]
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, dmin = _assign(fit_x, c)
        history.append(float(dmin.sum()))
        counts = np.bincount(labels, minlength=K)
        new_c = np.zeros_like(c)
        np.add.at(new_c, labels, fit_x)
        empty = counts == 0
        new_c[~empty] /= counts[~empty, None]
        if empty.any():
            # reseed each empty centre at the point farthest from its own centre
            far = dmin.copy()
            for k in np.flatnonzero(empty):
                j = int(np.argmax(far))
                logger.debug("cluster %d empty; reseeded at point %d", k, j)
                new_c[k] = fit_x[j]
                far[j] = -1.0
        shift = np.sqrt(((new_c - c) ** 2).sum(axis=1)).max()
        c = new_c
        if shift <= tol and not empty.any():
            break
    _, dmin = _assign(fit_x, c)
    inertia = float(dmin.sum())
    history.append(inertia)
    return c, inertia, it, history


def base_initialize(reference: ClusterModel, points, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                    subsample: int | None = None, rng_seed=None):
    """Fit ``points`` starting from the reference centroids so cluster ``j`` descends from reference ``j``."""
    x = _check_points(points)
    if x.shape[1] != reference.dim:
        raise ValueError(f"points have dimension {x.shape[1]}, reference model has {reference.dim}")
    model, labels = kmeans_fit(x, reference.K, init=reference.centroids, max_iter=max_iter, tol=tol,
                               subsample=subsample, rng_seed=rng_seed)
    return ClusterModel(model.centroids, model.inertia, model.iterations_run, reference.seed, subsample,
                        model.inertia_history), labels


def predict(model: ClusterModel, points) -> np.ndarray:
    """Nearest-centroid labels; ties go to the lowest index."""
    x = _check_points(points)
    if x.shape[1] != model.dim:
        raise ValueError(f"points have dimension {x.shape[1]}, model has {model.dim}")
    return _assign(x, model.centroids)[0]


def permute_model(model: ClusterModel, order) -> ClusterModel:
    """Model whose cluster ``i`` is the old cluster ``order[i]``."""
    order = np.asarray(order)
    if sorted(order.tolist()) != list(range(model.K)):
        raise ValueError("order must be a permutation of cluster indices")
    return ClusterModel(model.centroids[order], model.inertia, model.iterations_run, model.seed,
                        model.subsample, model.inertia_history)


def cluster_name(label: int) -> str:
    return f"phi{int(label) + 1}"
