import os

# sparse-matrix mutations verify transpose duality while the suite runs
os.environ.setdefault("POLAROSD_DEBUG", "1")

import itertools

import numpy as np
import pytest

from polarosd.gf2 import DenseBitMatrix


def all_words(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


def codebook(G: DenseBitMatrix) -> np.ndarray:
    """Every codeword of the code generated by the rows of ``G``."""
    msgs = all_words(G.n_rows)
    return (msgs.astype(np.int64) @ G.to_array().astype(np.int64)) % 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
