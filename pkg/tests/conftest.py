import numpy as np
import pytest
from hypothesis import settings

from jitter_transfer.simulator import THREE_RING_PAIRS, three_ring_oscillators

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

@pytest.fixture
def rings():
    return three_ring_oscillators()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture
def pairs():
    return THREE_RING_PAIRS


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
