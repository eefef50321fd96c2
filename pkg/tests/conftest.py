import sys

import numpy as np
import pytest

from pki_apt.dataset import ClassIndex, Dataset

CLASSES = ("DE", "IC", "LM", "NT", "P", "R")

# reference 6x6 test-set confusion matrices (rows true, columns predicted)
RF_PKI_COUNTS = np.array([
    [33, 0, 0, 1, 19, 21],
    [0, 62, 0, 7, 5, 3],
    [0, 0, 115, 12, 5, 10],
    [0, 0, 4, 55575, 4, 0],
    [3, 0, 2, 11, 342, 2],
    [22, 2, 6, 8, 38, 175],
])
GBT_PROGRESSIVE_COUNTS = np.array([
    [35, 0, 0, 2, 16, 21],
    [0, 62, 0, 8, 4, 3],
    [0, 0, 112, 14, 3, 13],
    [0, 0, 0, 55577, 5, 1],
    [4, 0, 2, 12, 340, 2],
    [23, 1, 6, 8, 41, 172],
])
TEST_ROW_SUMS = [74, 77, 142, 55583, 360, 251]


def blobs(n_per=100, k=2, d=2, sep=10.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = sep * np.eye(max(k, d))[:k, :d]
    x = np.vstack([c + rng.normal(size=(n_per, d)) for c in centers])
    y = np.repeat(np.arange(k), n_per)
    return x, y


@pytest.fixture
def class_index():
    return ClassIndex(CLASSES)


@pytest.fixture
def blob_dataset():
    x, y = blobs(n_per=100, k=3, d=4, sep=8.0, seed=1)
    return Dataset(x, y, ClassIndex(("a", "b", "c")))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
