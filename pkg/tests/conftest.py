import numpy as np
import pytest


def min_jerk_position(tau, distance=1.0):
    return distance * (10 * tau**3 - 15 * tau**4 + 6 * tau**5)


def min_jerk_narj_quadrature(distance=1.0, n_nodes=200_001):
    """Midpoint quadrature of |jerk| for the unit-duration minimum-jerk profile."""
    tau = (np.arange(n_nodes) + 0.5) / n_nodes
    return distance * float(np.mean(np.abs(60 - 360 * tau + 360 * tau**2)))


# Closed form 40*sqrt(3)/3, from integrating |60 - 360 t + 360 t^2| over [0, 1].
MIN_JERK_NARJ_EXACT = 23.094010767585031


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_CONFIG = """\
[run]
seed = 4
n_permutations = 200
n_group_samples = 200

[simulate]
n_subjects = 6
n_channels = 4
n_trials = 60
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL_CONFIG)
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
