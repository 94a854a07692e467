"""Bundled synthetic data: a small multi-user activity dataset with
class-conditional Gaussian clusters, and WISDM-format raw text."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import Dataset
from .ingestion import WISDM_ACTIVITIES


# class counts per user (classes 0..5). User 3 supplies most of classes 3-5 and
# user 2 most of class 1, mirroring pivotal users in a crowdsensing population.
DEFAULT_CLASS_COUNTS: dict[int, tuple[int, ...]] = {
    1: (30, 5, 30, 2, 2, 2),
    2: (10, 40, 10, 2, 2, 2),
    3: (10, 10, 10, 40, 40, 40),
    4: (30, 5, 30, 2, 2, 2),
    5: (30, 5, 30, 2, 2, 2),
    6: (30, 5, 30, 2, 2, 2),
}


def cluster_dataset(
    class_counts: Mapping[int, Sequence[int]] = DEFAULT_CLASS_COUNTS,
    m: int = 120,
    signal_features: int = 120,
    separation: float = 0.45,
    seed: int = 1,
) -> Dataset:
    """Class-conditional Gaussian clusters shared by all users.

    Each class mean differs from the others on ``signal_features`` coordinates
    (spread thinly over all of them by default, like framed acceleration);
    within-class noise has unit variance. With the defaults this is the bundled
    500-record, 6-user fixture.
    """
    n_classes = len(next(iter(class_counts.values())))
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, separation / np.sqrt(2), size=(n_classes, signal_features))
    feats, labels, owners = [], [], []
    for user, counts in class_counts.items():
        y = np.repeat(np.arange(n_classes), counts)
        x = rng.normal(0.0, 1.0, size=(len(y), m))
        x[:, :signal_features] += means[y]
        feats.append(x)
        labels.extend(y.tolist())
        owners.extend([user] * len(y))
    return Dataset(np.concatenate(feats), labels, owners, label_set=range(n_classes), m=m)


def wisdm_lines(
    users: dict[int, dict[str, int]],
    seed: int = 0,
    start_ns: int = 49105962326000,
) -> list[str]:
    """Raw lines ``user,activity,timestamp,x,y,z;`` at 20 Hz.

    ``users`` maps user id to {activity name: sample count}.
    """
    rng = np.random.default_rng(seed)
    lines = []
    for user, acts in users.items():
        t = start_ns
        for act, count in acts.items():
            level = WISDM_ACTIVITIES.index(act) if act in WISDM_ACTIVITIES else 0
            xyz = rng.normal(level, 1.0, size=(count, 3))
            for x, y, z in xyz:
                lines.append(f"{user},{act},{t},{x:.4f},{y:.4f},{z:.4f};")
                t += 50_000_000
    return lines
