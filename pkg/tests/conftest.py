import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from csav.grid import PeriodicGrid

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    return PeriodicGrid(2 * np.pi, 2 * np.pi, 8, 8)


@pytest.fixture
def grid_rect():
    return PeriodicGrid(3.0, 5.0, 8, 6)


def smooth_random_field(grid, rng, kmax=3, amp=0.5):
    """Random trigonometric polynomial with modes up to ``kmax``."""
    out = np.zeros(grid.shape)
    for mx in range(-kmax, kmax + 1):
        for my in range(-kmax, kmax + 1):
            a, b = rng.normal(size=2)
            ph = 2 * np.pi * (mx * grid.X / grid.Lx + my * grid.Y / grid.Ly)
            out += a * np.cos(ph) + b * np.sin(ph)
    return amp * out / np.max(np.abs(out))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
