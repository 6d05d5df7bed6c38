"""Order-flow clustering toolkit for market-by-order data.

Modules: ``market_data`` (LOBSTER files and book replay), ``features`` (six
per-order features and rolling normalisation), ``clustering`` (K-means++ with
reference initialisation), ``flow`` (bucket OFI and returns), ``strategy``
(roles, sign-of-OFI pnl and metrics), ``synth`` (synthetic days with planted
archetypes) and ``pipeline``/``cli`` (end-to-end runs).
"""

__version__ = "0.1.0"
