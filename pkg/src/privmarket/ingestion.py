"""WISDM-format accelerometer ingestion: parse raw lines, frame them into
fixed-length feature windows and make a stratified train/test split."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import Dataset
from .errors import FormatError, ParameterError

log = logging.getLogger(__name__)

# label codes follow this order; unseen activity names are appended sorted
WISDM_ACTIVITIES = ("Walking", "Jogging", "Upstairs", "Downstairs", "Sitting", "Standing")

MAX_MALFORMED_FRACTION = 0.10


@dataclass
class Run:
    timestamps: np.ndarray  # int64 nanoseconds
    xyz: np.ndarray  # (n, 3)

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class RawSeries:
    runs: dict[tuple[int, str], Run] = field(default_factory=dict)
    parsed: int = 0
    malformed: int = 0
    malformed_samples: list[str] = field(default_factory=list)

    @property
    def users(self) -> list[int]:
        return sorted({u for u, _ in self.runs})

    @property
    def activities(self) -> list[str]:
        seen = {a for _, a in self.runs}
        known = [a for a in WISDM_ACTIVITIES if a in seen]
        return known + sorted(seen - set(WISDM_ACTIVITIES))

    def label_codes(self) -> dict[str, int]:
        seen = {a for _, a in self.runs}
        extra = sorted(seen - set(WISDM_ACTIVITIES))
        return {a: i for i, a in enumerate(WISDM_ACTIVITIES + tuple(extra))}

    @property
    def sample_count(self) -> int:
        return sum(len(r) for r in self.runs.values())


def _parse_record(chunk: str) -> tuple[int, str, int, float, float, float]:
    parts = [p.strip() for p in chunk.split(",")]
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields, got {len(parts)}")
    user, activity, ts, x, y, z = parts
    if not activity:
        raise ValueError("empty activity")
    values = (float(x), float(y), float(z))
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite acceleration")
    return int(user), activity, int(ts), *values


def parse_raw(lines: Iterable[str]) -> RawSeries:
    """Parse ``user,activity,timestamp,x,y,z;`` lines.

    Samples keep their file order within each (user, activity) run. Malformed
    records are skipped and counted; more than 10% malformed is a format error.
    """
    buckets: dict[tuple[int, str], list] = defaultdict(list)
    series = RawSeries()
    for lineno, line in enumerate(lines, start=1):
        for chunk in line.strip().split(";"):
            if not chunk.strip():
                continue
            try:
                user, activity, ts, x, y, z = _parse_record(chunk)
            except ValueError as exc:
                series.malformed += 1
                if len(series.malformed_samples) < 5:
                    series.malformed_samples.append(f"line {lineno}: {chunk.strip()!r} ({exc})")
                continue
            buckets[(user, activity)].append((ts, x, y, z))
            series.parsed += 1
    total = series.parsed + series.malformed
    if total and series.malformed / total > MAX_MALFORMED_FRACTION:
        raise FormatError(
            f"{series.malformed} of {total} records malformed; e.g. " + "; ".join(series.malformed_samples)
        )
    if series.malformed:
        log.warning("skipped %d malformed records", series.malformed)
    for key in sorted(buckets):
        rows = buckets[key]
        series.runs[key] = Run(
            np.array([r[0] for r in rows], dtype=np.int64),
            np.array([r[1:] for r in rows], dtype=np.float64).reshape(-1, 3),
        )
    return series


def windowize(series: RawSeries, window_len: int = 200, downsample: int = 5) -> Dataset:
    """Cut each run into non-overlapping windows and average every ``downsample``
    samples per axis. Features are laid out x-block, y-block, z-block, giving
    M = 3 * window_len / downsample (120 with the defaults). Leftover samples at
    the end of a run are dropped; windows never cross runs."""
    if window_len <= 0 or downsample <= 0:
        raise ParameterError("window_len and downsample must be positive")
    if window_len % downsample:
        raise ParameterError(f"window_len {window_len} is not divisible by downsample {downsample}")
    per_axis = window_len // downsample
    m = 3 * per_axis
    codes = series.label_codes()
    feats, labels, owners = [], [], []
    for (user, activity), run in sorted(series.runs.items(), key=lambda kv: (kv[0][0], codes[kv[0][1]])):
        n = len(run) // window_len
        if not n:
            continue
        w = run.xyz[: n * window_len].reshape(n, per_axis, downsample, 3).mean(axis=2)
        feats.append(w.transpose(0, 2, 1).reshape(n, m))
        labels.extend([codes[activity]] * n)
        owners.extend([user] * n)
    if not feats:
        return Dataset.empty(m, set(codes.values()))
    return Dataset(np.concatenate(feats), labels, owners, label_set=set(codes.values()), m=m)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ParameterError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


def stratum_test_count(size: int, test_fraction: float) -> int:
    """round(test_fraction * size), at least 1 and leaving at least 1 for training."""
    if size < 2:
        return 0
    return min(size - 1, max(1, math.floor(test_fraction * size + 0.5)))


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Stratified split by (owner, label), each stratum shuffled by its own seeded stream."""
    test_mask = np.zeros(len(data), dtype=bool)
    strata = sorted({(int(o), int(l)) for o, l in zip(data.owners, data.labels)})
    for owner, label in strata:
        idx = np.flatnonzero((data.owners == owner) & (data.labels == label))
        if len(idx) < 2:
            log.warning("stratum (owner=%d, label=%d) has one record; kept for training", owner, label)
            continue
        rng = np.random.default_rng([spec.seed & (2**63 - 1), owner, label])
        chosen = rng.permutation(idx)[: stratum_test_count(len(idx), spec.test_fraction)]
        test_mask[chosen] = True
    return data.take(~test_mask), data.take(test_mask)
