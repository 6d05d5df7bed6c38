"""
Rebuilding the book and computing order features
=================================================

A synthetic day is written as a LOBSTER message/orderbook pair, read back,
replayed event by event, and turned into the six raw order features.
Run with ``python3 demos/01_book_replay_and_features.py``.
"""

import tempfile

import numpy as np

np.set_printoptions(precision=3, suppress=True)

from mboflow.features import FEATURE_NAMES, featurize_day, rolling_normalize
from mboflow.market_data import parse_message_file, parse_orderbook_file, replay
from mboflow.synth import SynthConfig, generate_day, write_day

# one day of planted order flow, about a thousand events
day = generate_day(SynthConfig(seed=0), day_index=0)
root = tempfile.mkdtemp()
msg_path, book_path, _ = write_day(root, "DEMO", "2021-01-04", day)
print("message file:  ", msg_path)
print("orderbook file:", book_path)

# the parser returns columnar arrays; prices are in 1/10000 dollars
events = parse_message_file(msg_path)
books = parse_orderbook_file(book_path)
print(f"{len(events)} events, first row: {events[0]}")

# replaying the messages reproduces the recorded 10-level book row for row
print("replay matches orderbook file:", np.array_equal(replay(events), books))

# features are measured on the book just before each event
f = featurize_day(events)
print(f"{f.ok.sum()} of {len(f.raw)} session events have all six features")
# every 160th event of the day
for name, col in zip(FEATURE_NAMES, f.raw[f.ok][::160].T):
    print(f"  {name:7s}", col)

# trailing-window z-scores; the first w-1 rows have no full window yet
z = rolling_normalize(f.raw[f.ok], 100)
print("normalised rows:", z.shape, "column means", np.round(z.mean(axis=0), 2))
