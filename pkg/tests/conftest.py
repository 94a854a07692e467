import numpy as np
import pytest

from privmarket.anonymizer import build_market
from privmarket.core import Dataset


def synthetic_market(levels, seed=0, coalitions=()):
    """Market of data-less users for the closed-form oracles."""
    return build_market(Dataset.empty(), dict(levels), seed, coalitions, users=levels.keys())


def toy_dataset(counts, m=4, n_labels=2, seed=0):
    """``counts`` maps owner -> number of records; labels cycle through n_labels."""
    rng = np.random.default_rng(seed)
    feats, labels, owners = [], [], []
    for owner, n in counts.items():
        feats.append(rng.normal(size=(n, m)))
        labels += [i % n_labels for i in range(n)]
        owners += [owner] * n
    return Dataset(np.concatenate(feats), labels, owners, label_set=range(n_labels), m=m)


@pytest.fixture
def three_users():
    return toy_dataset({1: 4, 2: 3, 3: 5})


# acceptance lines, printed after the run whatever the capture mode
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
