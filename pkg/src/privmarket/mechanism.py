"""Marginal-contribution payoffs, coalition payoffs and Shapley sharing.

Differences of accuracies are taken in exact rational arithmetic and only
rounded to float at the end, so e.g. a singleton coalition's payoff is
bit-identical to that user's own payoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping

import numpy as np

from . import _hashing
from .core import Coalition, MarketState, UserId
from .errors import MembershipError, ParameterError
from .oracle import AccuracyOracle

DEFAULT_EXACT_LIMIT = 10
DEFAULT_PERMUTATIONS = 20_000
_PERMUTATION_STREAM = 0x5045524D


class PayoffClass(str, Enum):
    PIVOTAL = "pivotal"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"


def classify(payoff: float, epsilon: float) -> PayoffClass:
    if payoff > epsilon:
        return PayoffClass.PIVOTAL
    if payoff < -epsilon:
        return PayoffClass.NEGATIVE
    return PayoffClass.NEUTRAL


@dataclass(frozen=True)
class PayoffReport:
    payoffs: dict[UserId, float]
    classes: dict[UserId, PayoffClass]
    epsilon: float
    f_full: float

    kind = "payoffs"
    csv_header = ("user", "payoff", "class")

    def csv_rows(self) -> list[tuple[UserId, float, str]]:
        return [(u, self.payoffs[u], self.classes[u].value) for u in sorted(self.payoffs)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "f_full": self.f_full,
            "epsilon": self.epsilon,
            "users": [{"user": u, "payoff": f, "class": c} for u, f, c in self.csv_rows()],
        }

    @classmethod
    def from_dict(cls, d) -> "PayoffReport":
        users = d["users"]
        return cls(
            {int(r["user"]): r["payoff"] for r in users},
            {int(r["user"]): PayoffClass(r["class"]) for r in users},
            d["epsilon"],
            d["f_full"],
        )


@dataclass(frozen=True)
class ShapleyResult:
    allocations: dict[UserId, float]
    method: str  # "exact" | "monte_carlo"
    total: float  # v(members)
    permutations: int = 0
    stderr: dict[UserId, float] = field(default_factory=dict)

    kind = "shapley"
    csv_header = ("user", "shapley", "stderr")

    def csv_rows(self) -> list[tuple]:
        return [(u, phi, self.stderr.get(u, "")) for u, phi in sorted(self.allocations.items())]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "method": self.method,
            "total": self.total,
            "permutations": self.permutations,
            "members": [
                {"user": u, "shapley": phi, **({"stderr": self.stderr[u]} if u in self.stderr else {})}
                for u, phi in sorted(self.allocations.items())
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "ShapleyResult":
        ms = d["members"]
        return cls(
            {int(m["user"]): m["shapley"] for m in ms},
            d["method"],
            d["total"],
            d["permutations"],
            {int(m["user"]): m["stderr"] for m in ms if "stderr" in m},
        )


def _diff(a: Fraction, b: Fraction) -> float:
    return float(Fraction(a) - Fraction(b))


def vcg_payoff(state: MarketState, oracle: AccuracyOracle, user: UserId) -> float:
    """F_n = f(all data) - f(all data except user n's)."""
    state.check_users([user])
    rest = [u for u in state.users if u != user]
    return _diff(oracle.evaluate(state), oracle.evaluate(state, rest))


def payoffs_all(state: MarketState, oracle: AccuracyOracle, epsilon: float | None = None) -> PayoffReport:
    if not state.users:
        raise ParameterError("payoffs need at least one user")
    eps = oracle.default_epsilon() if epsilon is None else float(epsilon)
    full = oracle.evaluate(state)
    payoffs, classes = {}, {}
    for u in state.users:
        f = _diff(full, oracle.evaluate(state, [v for v in state.users if v != u]))
        payoffs[u] = f
        classes[u] = classify(f, eps)
    return PayoffReport(payoffs, classes, eps, float(full))


def filter_negative_contributors(
    state: MarketState, oracle: AccuracyOracle, epsilon: float | None = None
) -> tuple[MarketState, list[UserId]]:
    """Drop harmful users one at a time, most negative first, until none remain.

    Payoffs are recomputed after every removal because they depend on who is left.
    """
    excluded: list[UserId] = []
    while state.users:
        report = payoffs_all(state, oracle, epsilon)
        negative = [(f, u) for u, f in report.payoffs.items() if f < -report.epsilon]
        if not negative:
            break
        _, worst = min(negative)  # most negative, then lowest id
        excluded.append(worst)
        state = state.without([worst])
    return state, excluded


def coalition_payoff(state: MarketState, oracle: AccuracyOracle, coalition: Coalition | int) -> float:
    """F_K = f(all data) - f(all data except the coalition's)."""
    c = state.coalition(coalition.id if isinstance(coalition, Coalition) else coalition)
    rest = [u for u in state.users if u not in c.members]
    return _diff(oracle.evaluate(state), oracle.evaluate(state, rest))


def coalition_char_fn(
    state: MarketState, oracle: AccuracyOracle, coalition: Coalition | int
) -> Callable[[Iterable[UserId]], Fraction]:
    """v(S) = f(outsiders + S) - f(outsiders), for S a subset of the members.

    Anchoring at the outsiders' data gives v(empty) = 0 and v(members) = F_K, so
    an efficient split of v distributes exactly the coalition payoff.
    """
    c = state.coalition(coalition.id if isinstance(coalition, Coalition) else coalition)
    outsiders = [u for u in state.users if u not in c.members]
    base = Fraction(oracle.evaluate(state, outsiders))

    def v(subset: Iterable[UserId]) -> Fraction:
        subset = frozenset(int(u) for u in subset)
        if not subset <= c.members:
            raise MembershipError(f"users {sorted(subset - c.members)} are not in coalition {c.id}")
        if not subset:
            return Fraction(0)
        return Fraction(oracle.evaluate(state, outsiders + sorted(subset))) - base

    v.members = tuple(sorted(c.members))  # type: ignore[attr-defined]
    return v


def _subset_values(v: Callable, members: tuple[UserId, ...]) -> list[Fraction]:
    """v of every subset, indexed by bitmask over ``members``."""
    k = len(members)
    return [
        Fraction(v([members[j] for j in range(k) if mask >> j & 1])) for mask in range(1 << k)
    ]


def shapley_exact(
    v: Callable[[Iterable[UserId]], Fraction],
    members: Iterable[UserId],
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> ShapleyResult:
    members = tuple(sorted(set(members)))
    k = len(members)
    if k > exact_limit:
        raise ParameterError(
            f"exact Shapley over {k} members exceeds the limit of {exact_limit} "
            f"(2^{k} subset evaluations); use the Monte Carlo method instead"
        )
    values = _subset_values(v, members)
    weight = [Fraction(math.factorial(s) * math.factorial(k - 1 - s), math.factorial(k)) for s in range(k)]
    phi = {}
    for j, u in enumerate(members):
        bit = 1 << j
        acc = Fraction(0)
        for mask in range(1 << k):
            if not mask & bit:
                acc += weight[mask.bit_count()] * (values[mask | bit] - values[mask])
        phi[u] = float(acc)
    return ShapleyResult(phi, "exact", float(values[-1]) if k else 0.0)


def sample_permutations(members: int, permutations: int, seed: int) -> np.ndarray:
    """Row t is a uniform permutation of range(members) derived from hash(seed, t) alone."""
    t = np.arange(permutations, dtype=np.int64)[:, None]
    j = np.arange(members, dtype=np.int64)[None, :]
    keys = _hashing.hash_keys(_PERMUTATION_STREAM, seed, t, j)
    return np.argsort(keys, axis=1, kind="stable")


def shapley_monte_carlo(
    v: Callable[[Iterable[UserId]], Fraction],
    members: Iterable[UserId],
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> ShapleyResult:
    """Average marginal contribution over sampled join orders.

    Marginals are tallied per (subset, member) transition and reduced exactly,
    so the estimate does not depend on summation order.
    """
    if permutations < 1:
        raise ParameterError("need at least one permutation")
    members = tuple(sorted(set(members)))
    k = len(members)
    if k == 0:
        return ShapleyResult({}, "monte_carlo", 0.0, permutations, {})
    perms = sample_permutations(k, permutations, seed)
    # bitmask of the players preceding each position
    bits = (1 << perms).astype(np.int64)
    before = np.cumsum(bits, axis=1) - bits
    cache: dict[int, Fraction] = {}

    def value(mask: int) -> Fraction:
        if mask not in cache:
            cache[mask] = Fraction(v([members[i] for i in range(k) if mask >> i & 1]))
        return cache[mask]

    phi, stderr = {}, {}
    for j, u in enumerate(members):
        pos = np.argmax(perms == j, axis=1)
        prefixes, counts = np.unique(before[np.arange(permutations), pos], return_counts=True)
        marginals = [value(int(s) | 1 << j) - value(int(s)) for s in prefixes]
        mean = sum((int(c) * mg for c, mg in zip(counts, marginals)), Fraction(0)) / permutations
        phi[u] = float(mean)
        if permutations > 1:
            ss = sum(int(c) * float(mg - mean) ** 2 for c, mg in zip(counts, marginals))
            stderr[u] = math.sqrt(ss / (permutations - 1)) / math.sqrt(permutations)
        else:
            stderr[u] = 0.0
    return ShapleyResult(phi, "monte_carlo", float(value((1 << k) - 1)), permutations, stderr)


def shapley(
    v: Callable[[Iterable[UserId]], Fraction],
    members: Iterable[UserId],
    method: str = "exact",
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> ShapleyResult:
    if method == "exact":
        return shapley_exact(v, members, exact_limit)
    if method in ("mc", "monte_carlo"):
        return shapley_monte_carlo(v, members, permutations, seed)
    raise ParameterError(f"unknown Shapley method {method!r} (expected exact or mc)")


def coalition_shapley(
    state: MarketState, oracle: AccuracyOracle, coalition: Coalition | int, **kwargs
) -> ShapleyResult:
    v = coalition_char_fn(state, oracle, coalition)
    return shapley(v, v.members, **kwargs)  # type: ignore[attr-defined]


def standalone_payoffs(state: MarketState, oracle: AccuracyOracle, users: Iterable[UserId]) -> Mapping[UserId, float]:
    return {u: vcg_payoff(state, oracle, u) for u in sorted(users)}
