"""Gaussian-noise anonymization and the privacy levels attached to it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _hashing
from .core import (
    Coalition,
    CoalitionSubmission,
    Dataset,
    MarketState,
    Submission,
    UserId,
)
from .errors import MembershipError, ParameterError

# stream tags so noise and shuffles never share hash inputs
_NOISE_STREAM = 0x4E4F495345
_SHUFFLE_STREAM = 0x5348554646


@dataclass(frozen=True)
class GaussianNoiseSpec:
    variance: float
    seed: int = 0

    def __post_init__(self):
        if not self.variance >= 0:
            raise ParameterError(f"noise variance must be >= 0, got {self.variance}")


def noise(data: Dataset, seed: int) -> np.ndarray:
    """Unit-variance noise for every scalar of ``data``.

    Each draw depends only on (seed, owner, record index, feature index), so a
    record gets the same noise whether it is anonymized alone or with others.
    """
    if not len(data) or not data.m:
        return np.zeros(data.features.shape)
    owners = data.owners[:, None]
    index = data.index[:, None]
    feat = np.arange(data.m, dtype=np.int64)[None, :]
    return _hashing.standard_normal(_NOISE_STREAM, seed, owners, index, feat)


def anonymize(data: Dataset, spec: GaussianNoiseSpec) -> Dataset:
    """Add i.i.d. N(0, p) noise to every feature. p = 0 returns ``data`` itself."""
    if spec.variance == 0:
        return data
    return data.with_features(data.features + np.sqrt(spec.variance) * noise(data, spec.seed))


def submit(data: Dataset, owner: UserId, p: float, seed: int) -> Submission:
    """Anonymize one user's true data and wrap it as a submission."""
    return Submission(owner, anonymize(data, GaussianNoiseSpec(p, seed)), float(p))


def build_market(
    true_data: Dataset,
    privacy: Mapping[UserId, float] | None = None,
    seed: int = 0,
    coalitions: Iterable[Coalition] = (),
    users: Iterable[UserId] | None = None,
) -> MarketState:
    """Split ``true_data`` by owner, anonymize each user at its level, collect the market.

    Users absent from ``privacy`` submit true data (p = 0).
    """
    privacy = dict(privacy or {})
    owners = true_data.owner_ids if users is None else sorted(set(users))
    unknown = set(privacy) - set(owners)
    if unknown:
        raise ParameterError(f"privacy levels given for users without data: {sorted(unknown)}")
    subs = {}
    for u in owners:
        subs[u] = submit(true_data.for_owner(u), u, privacy.get(u, 0.0), seed)
    return MarketState(subs, tuple(coalitions), seed)


def reanonymize(state: MarketState, true_data: Dataset, user: UserId, p: float) -> MarketState:
    """Replace one user's submission with its true data re-anonymized at level ``p``."""
    state.check_users([user])
    return state.with_submission(submit(true_data.for_owner(user), user, p, state.noise_seed))


def t_closeness_level(sub: Submission | CoalitionSubmission) -> float | tuple[float, ...]:
    """t of a submission, taken to be the variance of its added noise.

    A coalition submission reports one t per member (not aggregated).
    """
    if isinstance(sub, CoalitionSubmission):
        return sub.member_levels
    return sub.privacy


def k_anonymity_level(coalition: Coalition) -> int:
    if not coalition.members:
        raise ParameterError("empty coalition")
    return len(coalition.members)


def generalize_identity(
    coalition: Coalition, subs: Sequence[Submission], seed: int = 0
) -> CoalitionSubmission:
    """Publish the members' data under the coalition id.

    Records are retagged and shuffled with a seeded permutation so neither the
    owner column nor the record position reveals which member a record came from.
    """
    for s in subs:
        if s.owner not in coalition.members:
            raise MembershipError(f"user {s.owner} is not a member of coalition {coalition.id}")
    parts = [s.data for s in sorted(subs, key=lambda s: s.owner) if len(s.data)]
    levels = tuple(sorted(float(s.privacy) for s in subs))
    if not parts:
        m = subs[0].data.m if subs else 0
        return CoalitionSubmission(coalition.id, Dataset.empty(m), levels)
    feats = np.concatenate([d.features for d in parts])
    labels = np.concatenate([d.labels for d in parts])
    keys = _hashing.hash_keys(_SHUFFLE_STREAM, seed, coalition.id, np.arange(len(labels), dtype=np.int64))
    order = np.argsort(keys, kind="stable")
    label_set = frozenset().union(*(d.label_set for d in parts))
    data = Dataset(
        feats[order], labels[order], np.full(len(labels), coalition.id),
        index=np.arange(len(labels)), label_set=label_set, m=feats.shape[1],
    )
    return CoalitionSubmission(coalition.id, data, levels)
