import numpy as np
import pytest

from bridgegraph.vecstore import Dataset


def random_dataset(n: int, d: int, seed: int = 0, byte_valued: bool = False) -> Dataset:
    rng = np.random.default_rng(seed)
    if byte_valued:
        return Dataset(rng.integers(0, 256, size=(n, d), dtype=np.uint8), "uint8")
    return Dataset(rng.normal(size=(n, d)).astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sift10k():
    """10K clustered byte-valued base set, 200 queries and a default-parameter index."""
    from bridgegraph.datasets import sift_like
    from bridgegraph.graph import build_index

    base, queries = sift_like(10_000, 200, seed=11)
    return base, queries, build_index(base, m=4, n=50, R=20, t=100, b=5, seed=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
