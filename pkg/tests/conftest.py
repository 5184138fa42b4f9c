import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def blobs(rng, n=200, d=2, separation=6.0, scale=1.0):
    """Two Gaussian blobs with labels -1 / +1, shuffled."""
    half = n // 2
    X = np.vstack([rng.normal(0.0, scale, (half, d)), rng.normal(separation, scale, (n - half, d))])
    y = np.r_[-np.ones(half, dtype=int), np.ones(n - half, dtype=int)]
    perm = rng.permutation(n)
    return X[perm], y[perm]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
