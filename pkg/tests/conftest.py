import numpy as np
import pytest

from fdrelay.channel import PAPER_PROFILE, SystemConfig, build_grid, dbm_to_w, draw_channels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config() -> SystemConfig:
    """16 bins at full-profile scale; quick enough for solver tests."""
    return PAPER_PROFILE.with_(num_subchannels=16)


@pytest.fixture
def small_channels(small_config):
    return draw_channels(small_config, np.random.default_rng(3))


@pytest.fixture
def mid_config() -> SystemConfig:
    return PAPER_PROFILE.with_(num_subchannels=64, source_budget_p=dbm_to_w(20.0), relay_budget_q=dbm_to_w(20.0))


@pytest.fixture
def grid16(small_config):
    return build_grid(small_config)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
