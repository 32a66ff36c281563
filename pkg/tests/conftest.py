import numpy as np
import pytest

from poisson_caic import ClusteredCounts
from poisson_caic.simlab import SimulationDesign, replicate_rng, simulate_dataset


def random_intercept_data(ys, x=None):
    """Clusters with design [1, j] and a random intercept."""
    clusters = []
    for y in ys:
        n = len(y)
        j = np.arange(n, dtype=float) if x is None else np.asarray(x, dtype=float)
        clusters.append((y, np.column_stack([np.ones(n), j]), np.ones((n, 1))))
    return ClusteredCounts(clusters)


def intercept_only(ys):
    return ClusteredCounts([(y, np.ones((len(y), 1)), np.ones((len(y), 1))) for y in ys])


@pytest.fixture
def design_data():
    """One draw from the n_i = 5, sigma_b = 0.5 random-intercept design."""
    return simulate_dataset(SimulationDesign(n_i=5, sigma_b=0.5), replicate_rng(123, 0, 0, 0))


@pytest.fixture
def small_data():
    return random_intercept_data([[1, 3, 2], [6, 9, 11], [0, 2, 1], [4, 4, 7]])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
