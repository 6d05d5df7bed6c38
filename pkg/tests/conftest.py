"""Shared fixtures: random but book-consistent event streams."""

from __future__ import annotations

import numpy as np
import pytest

from mboflow.market_data import N_LEVELS, TICK, EventFrame


def random_stream(seed: int, n: int = 1000, start: float = 34_200.0, hidden_rate: float = 0.03,
                  unit_size: bool = False, lot: int = 100) -> EventFrame:
    """A consistent stream of adds, cancels, deletes and executions.

    Each side is kept within ten levels so no depth trimming happens, sides
    sometimes run empty, and a few hidden executions and pre-session events are
    mixed in.  Times are drawn on a nanosecond grid.
    """
    rng = np.random.default_rng(seed)
    book = {1: {}, -1: {}}
    rows = []
    t_ns = int(round(start * 1e9)) - int(rng.integers(0, 3)) * 1_000_000_000
    ref = 1_000_000
    for _ in range(n):
        t_ns += int(rng.choice([0, 1, 1_000, 1_000_000, 250_000_000, 3_000_000_000]))
        t = t_ns / 1e9
        u = rng.random()
        side = 1 if rng.random() < 0.5 else -1
        own, opp = book[side], book[-side]
        size = lot if unit_size else lot * int(rng.integers(1, 6))
        if u < hidden_rate:
            rows.append((t, 5, 0, size, ref, side))
            continue
        if u < 0.55 or not own:
            if own:
                best = max(own) if side == 1 else min(own)
                offset = int(rng.integers(-2, 6))  # negative improves
                price = best - side * offset * TICK
            elif opp:
                best_opp = min(opp) if side == 1 else max(opp)
                price = best_opp - side * int(rng.integers(1, 4)) * TICK
            else:
                price = ref - side * int(rng.integers(1, 4)) * TICK
            if opp:
                best_opp = min(opp) if side == 1 else max(opp)
                if side * (best_opp - price) <= 0:
                    price = best_opp - side * TICK
            if price <= 0:
                continue
            if price not in own and len(own) >= N_LEVELS:
                price = int(rng.choice(sorted(own)))
            own[price] = own.get(price, 0) + size
            rows.append((t, 1, len(rows), size, price, side))
            continue
        if u < 0.85:
            price = int(rng.choice(sorted(own)))
            vol = own[price]
            etype = 3 if rng.random() < 0.5 else 2
            q = vol if etype == 3 and rng.random() < 0.7 else lot * int(rng.integers(1, vol // lot + 1))
        else:
            price = max(own) if side == 1 else min(own)
            vol = own[price]
            etype = 4
            q = lot * int(rng.integers(1, vol // lot + 1))
        if unit_size:
            q = lot
        own[price] = vol - q
        if own[price] == 0:
            del own[price]
        rows.append((t, etype, len(rows), q, price, side))
    if not rows:
        return EventFrame.empty()
    return EventFrame(*zip(*rows))


@pytest.fixture
def stream_factory():
    return random_stream


@pytest.fixture(scope="session")
def fuzz_streams():
    return [random_stream(seed, n=300 + 7 * seed) for seed in range(20)]


# ---------------------------------------------------------------------------
# Acceptance report: one PASS/FAIL line per criterion in the terminal summary
# ---------------------------------------------------------------------------

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    _ACCEPTANCE[number] = f"criterion {number} {status}: {title}" + (f" ({detail})" if detail else "")
    print(f"\n{_ACCEPTANCE[number]}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
