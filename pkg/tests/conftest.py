import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from diverse_pop.protocol import Configuration, WeightTable
from diverse_pop.rng import make_rng

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return make_rng(12345)


@st.composite
def weighted_configs(draw, max_k=3, max_n=12, min_n=2, all_dark=False, integer=False):
    k = draw(st.integers(1, max_k))
    if integer:
        ws = draw(st.lists(st.integers(1, 4), min_size=k, max_size=k))
    else:
        ws = draw(st.lists(st.sampled_from([1.0, 1.5, 2.0, 3.0, 4.25]), min_size=k, max_size=k))
    dark = draw(st.lists(st.integers(0, max_n), min_size=k, max_size=k))
    light = [0] * k if all_dark else draw(st.lists(st.integers(0, max_n), min_size=k, max_size=k))
    if sum(dark) + sum(light) < min_n:
        dark[0] += min_n - sum(dark) - sum(light)
    return Configuration.from_lists(dark, light), WeightTable.of(ws)


def sustainable(config):
    return all(config.dark_counts[c] >= 1 for c in config.colours)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
