import datetime as dt

import hypothesis
import numpy as np
import pytest

from fnac.marketdata import Episode, MarketSeries, SyntheticSpec, synthesize

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("default")


def make_episode(mid, spread=0.0, date=dt.date(2024, 1, 2)):
    mid = np.asarray(mid, dtype=float)
    spread = np.broadcast_to(np.asarray(spread, dtype=float), mid.shape).copy()
    return Episode(date=date, mid=mid, spread=spread)


@pytest.fixture
def planted_series():
    spec = SyntheticSpec(noise=2e-5, amplitude=5e-5, spread=1e-5, days=6)
    return synthesize(spec, seed=3)


@pytest.fixture
def flat_series():
    return synthesize(SyntheticSpec(amplitude=0.0, noise=0.0, spread=1e-4, days=3), seed=0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
