import numpy as np
import pytest

from fdsic.frontend import split_ranges, SiDataset
from fdsic.signal import ComplexSeq


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, n, scale=1.0):
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def make_dataset(x, y, provenance="hammerstein", test_fraction=0.1):
    x, y = ComplexSeq(x), ComplexSeq(y)
    train, test = split_ranges(len(x), test_fraction)
    return SiDataset(x, y, train, test, provenance)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
