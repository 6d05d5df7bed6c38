"""
Clustering orders into trader archetypes
========================================

Normalised features from ten synthetic days of one stock are clustered with
k-means++ (K=3).  A second stock is then clustered starting from the first
stock's centroids, so cluster k means the same archetype in both.
"""

import numpy as np

from mboflow.clustering import base_initialize, kmeans_fit
from mboflow.features import featurize_day, rolling_normalize
from mboflow.synth import ARCHETYPES, SynthConfig, generate_day

W = 100
cfg = SynthConfig(seed=1, separation=10.0)


def stock_points(stock_index, n_days=10):
    """Normalised features and true archetypes for one stock, days concatenated."""
    raws, truth = [], []
    for k in range(n_days):
        day = generate_day(cfg, k, stock_index=stock_index, snapshots=False)
        f = featurize_day(day.events)
        raws.append(f.raw[f.ok])
        truth.append(day.truth.labels[day.events.time >= 34_200][f.ok])
    return rolling_normalize(np.vstack(raws), W), np.concatenate(truth)[W - 1:]


def crosstab(truth, labels):
    t = np.zeros((3, 3), dtype=int)
    np.add.at(t, (truth, labels), 1)
    return t


x_ref, truth_ref = stock_points(0)
model, labels = kmeans_fit(x_ref, 3, rng_seed=0, n_init=10)
print(f"reference stock: {len(x_ref)} orders, inertia {model.inertia:.1f}, {model.iterations_run} iterations")
print("rows: true archetype, columns: cluster")
for name, row in zip(ARCHETYPES, crosstab(truth_ref, labels)):
    print(f"  {name:14s}", row)

# the second stock starts from the reference centroids instead of a fresh k-means++ draw
x_b, truth_b = stock_points(3)
model_b, labels_b = base_initialize(model, x_b)
# every stock gets the same per-round order budget, so the archetype counts match the reference
print("\nsecond stock, base-initialised from the reference:")
for name, row in zip(ARCHETYPES, crosstab(truth_b, labels_b)):
    print(f"  {name:14s}", row)
print("centroid shift:", np.round(np.linalg.norm(model_b.centroids - model.centroids, axis=1), 3))
