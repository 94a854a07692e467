"""Domain types shared by every module, plus the leave-out dataset algebra.

A :class:`Dataset` is column-oriented (numpy arrays) but behaves like an ordered
list of :class:`Record`. All types are immutable; "changing" a market means
building a new one.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .errors import MembershipError, ParameterError, StructuralError, UnknownIdError

UserId = int
CoalitionId = int

# Coalition ids live at or above this value; user ids live below it.
COALITION_ID_BASE = 1_000_000


def is_coalition_id(identifier: int) -> bool:
    return identifier >= COALITION_ID_BASE


@dataclass(frozen=True)
class Record:
    features: tuple[float, ...]
    label: int
    owner: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Dataset:
    """Labeled feature records with per-record owner tags.

    ``index`` holds each record's position within its owner's source data. It
    keys the anonymization noise and fixes the record order after a union.
    """

    def __init__(
        self,
        features,
        labels,
        owners,
        index=None,
        label_set: Iterable[int] | None = None,
        m: int | None = None,
    ):
        features = np.array(features, dtype=np.float64)
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        owners = np.array(owners, dtype=np.int64).reshape(-1)
        if features.size == 0 and features.ndim != 2:
            features = features.reshape(0, 0 if m is None else m)
        if features.ndim != 2:
            raise StructuralError(f"features must be 2-D, got shape {features.shape}")
        if m is not None and features.shape[1] != m and len(features):
            raise StructuralError(f"feature dimension {features.shape[1]} != declared m={m}")
        if m is not None and not len(features):
            features = features.reshape(0, m)
        n = features.shape[0]
        if labels.shape[0] != n or owners.shape[0] != n:
            raise StructuralError("features, labels and owners must have the same length")
        if index is None:
            index = _positions_within_owner(owners)
        index = np.array(index, dtype=np.int64).reshape(-1)
        if index.shape[0] != n:
            raise StructuralError("index must have one entry per record")
        if (owners < 0).any():
            raise ParameterError("owner ids must be non-negative")
        declared = frozenset(int(c) for c in labels) if label_set is None else frozenset(int(c) for c in label_set)
        if label_set is not None and not frozenset(int(c) for c in labels) <= declared:
            raise StructuralError("labels outside the declared label set")
        self.features = _frozen(features)
        self.labels = _frozen(labels)
        self.owners = _frozen(owners)
        self.index = _frozen(index)
        self.label_set = declared

    @classmethod
    def empty(cls, m: int = 0, label_set: Iterable[int] = ()) -> "Dataset":
        return cls(np.zeros((0, m)), [], [], label_set=label_set, m=m)

    @classmethod
    def from_records(cls, records: Sequence[Record], m: int | None = None,
                     label_set: Iterable[int] | None = None) -> "Dataset":
        if not records:
            return cls.empty(m or 0, label_set or ())
        return cls(
            [r.features for r in records],
            [r.label for r in records],
            [r.owner for r in records],
            label_set=label_set,
            m=m,
        )

    @property
    def m(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    @property
    def records(self) -> list[Record]:
        return [
            Record(tuple(float(v) for v in row), int(lab), int(own))
            for row, lab, own in zip(self.features, self.labels, self.owners)
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.m == other.m
            and self.label_set == other.label_set
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.owners, other.owners)
            and np.array_equal(self.index, other.index)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Dataset(L={len(self)}, m={self.m}, owners={self.owner_ids}, labels={sorted(self.label_set)})"

    @property
    def owner_ids(self) -> list[int]:
        return sorted({int(o) for o in np.unique(self.owners)})

    def take(self, mask_or_idx) -> "Dataset":
        return Dataset(
            self.features[mask_or_idx],
            self.labels[mask_or_idx],
            self.owners[mask_or_idx],
            self.index[mask_or_idx],
            label_set=self.label_set,
            m=self.m,
        )

    def for_owner(self, owner: int) -> "Dataset":
        return self.take(self.owners == owner)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.owners, self.index, self.label_set, self.m)

    def retagged(self, owner: int) -> "Dataset":
        return Dataset(self.features, self.labels, np.full(len(self), owner), self.index, self.label_set, self.m)

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.m).tobytes())
        for arr in (self.features, self.labels, self.owners, self.index):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(sorted(self.label_set)).encode())
        return h.hexdigest()[:16]

    # serialization: header owner,label,f0,...,f{m-1}

    def to_csv(self, target: str | os.PathLike | TextIO) -> None:
        if isinstance(target, (str, os.PathLike)):
            with open(target, "w", newline="") as fh:
                self._write_csv(fh)
        else:
            self._write_csv(target)

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self._write_csv(buf)
        return buf.getvalue()

    def _write_csv(self, fh: TextIO) -> None:
        fh.write(",".join(["owner", "label"] + [f"f{j}" for j in range(self.m)]) + "\n")
        for row, lab, own in zip(self.features.tolist(), self.labels.tolist(), self.owners.tolist()):
            fh.write(f"{own},{lab}," + ",".join(map(repr, row)) + "\n" if row else f"{own},{lab}\n")

    @classmethod
    def read_csv(cls, source: str | os.PathLike | TextIO) -> "Dataset":
        if isinstance(source, (str, os.PathLike)):
            with open(source, newline="") as fh:
                return cls._read_csv(fh)
        return cls._read_csv(source)

    @classmethod
    def _read_csv(cls, fh: TextIO) -> "Dataset":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return cls.empty()
        m = len(header) - 2
        if header[:2] != ["owner", "label"] or header[2:] != [f"f{j}" for j in range(m)]:
            raise StructuralError(f"unexpected dataset header: {','.join(header[:5])}...")
        owners, labels, feats = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 2:
                raise StructuralError(f"line {lineno}: expected {m + 2} fields, got {len(row)}")
            owners.append(int(row[0]))
            labels.append(int(row[1]))
            feats.append([float(v) for v in row[2:]])
        return cls(np.array(feats, dtype=np.float64).reshape(len(feats), m), labels, owners, m=m)


def _positions_within_owner(owners: np.ndarray) -> np.ndarray:
    index = np.zeros(len(owners), dtype=np.int64)
    seen: dict[int, int] = {}
    for i, o in enumerate(owners.tolist()):
        index[i] = seen.get(o, 0)
        seen[o] = index[i] + 1
    return index


def union(datasets: Sequence[Dataset]) -> Dataset:
    """Concatenate datasets, ordered by (owner id, original index)."""
    nonempty = [d for d in datasets if len(d)]
    dims = {d.m for d in nonempty}
    if len(dims) > 1:
        raise StructuralError(f"cannot union datasets of dimensions {sorted(dims)}")
    m = dims.pop() if dims else (datasets[0].m if datasets else 0)
    label_set = frozenset().union(*(d.label_set for d in datasets))
    if not nonempty:
        return Dataset.empty(m, label_set)
    feats = np.concatenate([d.features for d in nonempty])
    labels = np.concatenate([d.labels for d in nonempty])
    owners = np.concatenate([d.owners for d in nonempty])
    index = np.concatenate([d.index for d in nonempty])
    order = np.lexsort((index, owners))
    return Dataset(feats[order], labels[order], owners[order], index[order], label_set, m)


@dataclass(frozen=True)
class Submission:
    """One user's anonymized data together with the declared privacy level."""

    owner: UserId
    data: Dataset
    privacy: float = 0.0

    def __post_init__(self):
        if self.privacy < 0:
            raise ParameterError(f"privacy level must be >= 0, got {self.privacy}")
        if len(self.data) and not (self.data.owners == self.owner).all():
            raise MembershipError(f"submission of user {self.owner} carries records of other owners")


@dataclass(frozen=True)
class CoalitionSubmission:
    """Data of several users published under one generalization identity.

    ``member_levels`` keeps each member's noise level without saying whose it is.
    """

    owner: CoalitionId
    data: Dataset
    member_levels: tuple[float, ...]

    def to_csv_string(self) -> str:
        return self.data.to_csv_string()


@dataclass(frozen=True)
class Coalition:
    id: CoalitionId
    members: frozenset[UserId]

    def __init__(self, id: CoalitionId, members: Iterable[UserId]):
        object.__setattr__(self, "id", int(id))
        object.__setattr__(self, "members", frozenset(int(u) for u in members))
        if not is_coalition_id(self.id):
            raise ParameterError(f"coalition ids must be >= {COALITION_ID_BASE}, got {self.id}")
        if not self.members:
            raise ParameterError("a coalition needs at least one member")

    @property
    def k(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class MarketState:
    submissions: Mapping[UserId, Submission]
    coalitions: tuple[Coalition, ...] = ()
    noise_seed: int = 0
    _by_coalition: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        subs = dict(sorted((int(k), v) for k, v in self.submissions.items()))
        for uid, sub in subs.items():
            if sub.owner != uid:
                raise StructuralError(f"submission keyed {uid} belongs to {sub.owner}")
            if is_coalition_id(uid):
                raise ParameterError(f"user id {uid} falls in the coalition id range")
        dims = {s.data.m for s in subs.values() if len(s.data)}
        if len(dims) > 1:
            raise StructuralError(f"submissions have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "submissions", subs)
        coalitions = tuple(self.coalitions)
        object.__setattr__(self, "coalitions", coalitions)
        by_id, seen = {}, set()
        for c in coalitions:
            if c.id in by_id:
                raise StructuralError(f"duplicate coalition id {c.id}")
            missing = c.members - subs.keys()
            if missing:
                raise UnknownIdError(f"coalition {c.id} has unknown members {sorted(missing)}")
            if c.members & seen:
                raise MembershipError(f"users {sorted(c.members & seen)} appear in two coalitions")
            seen |= c.members
            by_id[c.id] = c
        object.__setattr__(self, "_by_coalition", by_id)

    @property
    def users(self) -> tuple[UserId, ...]:
        return tuple(self.submissions)

    @property
    def levels(self) -> dict[UserId, float]:
        return {u: s.privacy for u, s in self.submissions.items()}

    def submission(self, user: UserId) -> Submission:
        try:
            return self.submissions[user]
        except KeyError:
            raise UnknownIdError(f"unknown user {user}") from None

    def coalition(self, cid: CoalitionId) -> Coalition:
        try:
            return self._by_coalition[cid]
        except KeyError:
            raise UnknownIdError(f"unknown coalition {cid}") from None

    def check_users(self, users: Iterable[UserId]) -> frozenset[UserId]:
        users = frozenset(int(u) for u in users)
        unknown = users - self.submissions.keys()
        if unknown:
            raise UnknownIdError(f"unknown user(s) {sorted(unknown)}")
        return users

    def dataset(self, users: Iterable[UserId]) -> Dataset:
        """Union of the submissions of ``users``."""
        users = self.check_users(users)
        return union([self.submissions[u].data for u in sorted(users)] or [self._empty()])

    def full(self) -> Dataset:
        return self.dataset(self.users)

    def _empty(self) -> Dataset:
        m = next((s.data.m for s in self.submissions.values()), 0)
        labels = frozenset().union(*(s.data.label_set for s in self.submissions.values()))
        return Dataset.empty(m, labels)

    def with_submission(self, sub: Submission) -> "MarketState":
        subs = dict(self.submissions)
        subs[sub.owner] = sub
        return MarketState(subs, self.coalitions, self.noise_seed)

    def with_coalition(self, coalition: Coalition) -> "MarketState":
        return MarketState(self.submissions, self.coalitions + (coalition,), self.noise_seed)

    def without(self, users: Iterable[UserId]) -> "MarketState":
        """Market with ``users`` removed; emptied coalitions are dropped."""
        users = self.check_users(users)
        subs = {u: s for u, s in self.submissions.items() if u not in users}
        coalitions = []
        for c in self.coalitions:
            rest = c.members - users
            if rest:
                coalitions.append(Coalition(c.id, rest))
        return MarketState(subs, tuple(coalitions), self.noise_seed)


def leave_out(state: MarketState, excluded: Iterable[UserId]) -> Dataset:
    """The anonymized union with the data of ``excluded`` users removed."""
    excluded = state.check_users(excluded)
    return state.dataset(u for u in state.users if u not in excluded)
