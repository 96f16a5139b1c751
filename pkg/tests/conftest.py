import numpy as np
import pytest

from w5h.core import Dataset, TraceObject
from w5h.features import FeatureExtractor
from w5h.index import build_index
from w5h.synthetic import generate_synthetic_dataset
from w5h.topics import fit_lda


def make_dataset(records):
    """Build a frozen dataset from (id, dims) pairs."""
    return Dataset(TraceObject(oid, dims) for oid, dims in records).freeze()


@pytest.fixture(scope="session")
def small_corpus():
    d = generate_synthetic_dataset(11, 300)
    idx = build_index(d)
    m = fit_lda(d, K=4, iters=60, seed=3)
    return d, idx, m, FeatureExtractor(d, idx, m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
