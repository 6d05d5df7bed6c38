"""
Order flow imbalance per half-hour bucket
=========================================

Every event at (or improving) the best quotes adds a signed term to the
imbalance of its 30-minute bucket.  This script splits a day's imbalance by
event type and by the planted trader archetype, and lines it up with the
bucket returns.
"""

import numpy as np

from mboflow.features import featurize_day
from mboflow.flow import (
    CLUSTER_SCOPES,
    EVENT_SCOPES,
    MEASURES,
    FlowTerm,
    boundary_mids,
    bucket_index,
    classify_terms,
    compute_bucket_returns,
    ofi_cube,
)
from mboflow.synth import ARCHETYPES, SynthConfig, generate_day

day = generate_day(SynthConfig(seed=1, kappa=1.0), day_index=0, snapshots=False)
f = featurize_day(day.events)
ev = f.events

# classify each session event against the best quotes just before it
terms = classify_terms(ev.event_type, ev.side, ev.price, f.best_bid, f.best_ask)
print("term counts:", {FlowTerm(t).name: int((terms == t).sum()) for t in np.unique(terms)})

# the archetype labels stand in for cluster labels here
labels = day.truth.labels[day.events.time >= 34_200]
cube = ofi_cube(terms, ev.size, bucket_index(ev.time), labels)
print("cube axes: cluster scope x event scope x measure x bucket =", cube.shape)

# decomposition: add + cancel + trade imbalance equals the total
total = cube[3, 0, 0]
parts = sum(cube[3, EVENT_SCOPES.index(s), 0] for s in ("add", "cancel", "trade"))
print("decomposition holds:", np.array_equal(total, parts))

returns = compute_bucket_returns(boundary_mids(f.snap_time, f.snap_mid, f.initial_mid))
print("\nbucket  next-bucket return  " + "  ".join(f"{a[:5]:>6s}" for a in ARCHETYPES))
for j in range(12):
    row = "  ".join(f"{cube[c, 0, MEASURES.index('size'), j]:6d}" for c in range(3))
    print(f"{j + 1:6d}  {returns.frnb[j]:+18.5f}  {row}")

# with kappa = 1 the opportunistic imbalance always points at the next move
opp = cube[CLUSTER_SCOPES.index("phi2"), 0, 0, :12]
print("\nopportunistic sign agrees with next return:", np.mean(np.sign(opp) == np.sign(returns.frnb)))
