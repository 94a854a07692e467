"""Accuracy functions: map a set of users' submitted data to an accuracy in [0, 1].

The three synthetic kinds are closed-form stand-ins used to check the mechanism
exactly; they compute with :class:`fractions.Fraction` so payoff identities hold
with no rounding. The classifier kind trains a softmax regression on the
submitted records and scores it on a fixed held-out set.

All oracles memoize by subset signature: the Shapley path re-asks for the same
subsets many times.
"""

from __future__ import annotations

import hashlib
import json
import threading
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping

import numpy as np

from .core import Dataset, MarketState, UserId
from .errors import ConfigurationError, ParameterError


def exact(x) -> Fraction:
    """Exact rational for a number; floats go through their shortest repr."""
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    return Fraction(repr(float(x)))


def subset_signature(
    users: Iterable[UserId],
    levels: Mapping[UserId, float],
    noise_seed: int = 0,
    oracle_id: str = "",
    digests: Mapping[UserId, str] | None = None,
) -> tuple:
    """Canonical cache key of a training subset; member order does not matter."""
    digests = digests or {}
    members = tuple(
        (u, float(levels[u]), digests.get(u, "")) for u in sorted({int(u) for u in users})
    )
    return (oracle_id, int(noise_seed), members)


class AccuracyOracle(ABC):
    kind: str = ""

    def __init__(self):
        self._cache: dict[tuple, Fraction] = {}
        self._lock = threading.Lock()
        self.evaluations = 0  # number of cache misses

    @abstractmethod
    def params(self) -> dict[str, Any]:
        """JSON-serializable parameters (used for the oracle id and report echoes)."""

    @abstractmethod
    def _compute(self, state: MarketState, users: frozenset[UserId]) -> Fraction: ...

    def default_epsilon(self) -> float:
        return 1e-9

    @property
    def oracle_id(self) -> str:
        blob = json.dumps({"kind": self.kind, **self.params()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def evaluate(self, state: MarketState, users: Iterable[UserId] | None = None) -> Fraction:
        """Accuracy of the model trained on the submissions of ``users`` (default: all)."""
        users = state.check_users(state.users if users is None else users)
        key = subset_signature(
            users,
            state.levels,
            state.noise_seed,
            self.oracle_id,
            {u: state.submissions[u].data.digest for u in users},
        )
        value = self._cache.get(key)
        if value is not None:
            return value
        value = self._compute(state, users)
        if not 0 <= value <= 1:
            raise AssertionError(f"{self.kind} oracle produced {value} outside [0, 1]")
        with self._lock:
            self.evaluations += 1
            return self._cache.setdefault(key, value)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()


class _SyntheticOracle(AccuracyOracle):
    def __init__(self, weights: Mapping[UserId, float]):
        super().__init__()
        self.weights = {int(u): float(w) for u, w in sorted(weights.items())}
        for u, w in self.weights.items():
            if not 0 <= w <= 1:
                raise ParameterError(f"weight of user {u} must lie in [0, 1], got {w}")
        self._w = {u: exact(w) for u, w in self.weights.items()}

    def params(self) -> dict[str, Any]:
        return {"weights": {str(u): w for u, w in self.weights.items()}}

    def _weight(self, user: UserId) -> Fraction:
        try:
            return self._w[user]
        except KeyError:
            raise ConfigurationError(f"{self.kind} oracle has no weight for user {user}") from None

    def _quality(self, state: MarketState, user: UserId) -> Fraction:
        # w_n / (1 + p_n)
        return self._weight(user) / (1 + exact(state.submissions[user].privacy))


class AdditiveOracle(_SyntheticOracle):
    """f(S) = min(1, sum of w_n / (1 + p_n))."""

    kind = "additive"

    def __init__(self, weights: Mapping[UserId, float]):
        super().__init__(weights)
        if sum(self._w.values()) > 1:
            raise ParameterError("additive oracle weights must sum to at most 1")

    def _compute(self, state, users):
        return min(Fraction(1), sum((self._quality(state, u) for u in sorted(users)), Fraction(0)))


class DiminishingOracle(_SyntheticOracle):
    """f(S) = 1 - prod of (1 - w_n / (1 + p_n))."""

    kind = "diminishing"

    def _compute(self, state, users):
        miss = Fraction(1)
        for u in sorted(users):
            miss *= 1 - self._quality(state, u)
        return 1 - miss


class HarmOracle(_SyntheticOracle):
    """f(S) = clamp(b + sum of w_n (1 - p_n / rho), 0, 1).

    Users anonymizing beyond ``rho`` lower the accuracy.
    """

    kind = "harm"

    def __init__(self, weights: Mapping[UserId, float], base: float = 0.5, rho: float = 8.0):
        super().__init__(weights)
        if not 0 <= base <= 1:
            raise ParameterError(f"base accuracy must lie in [0, 1], got {base}")
        if not rho > 0:
            raise ParameterError(f"harm threshold rho must be > 0, got {rho}")
        self.base, self.rho = float(base), float(rho)
        self._b, self._rho = exact(base), exact(rho)

    def params(self):
        return {**super().params(), "base": self.base, "rho": self.rho}

    def _compute(self, state, users):
        total = self._b
        for u in sorted(users):
            total += self._weight(u) * (1 - exact(state.submissions[u].privacy) / self._rho)
        return min(Fraction(1), max(Fraction(0), total))


# -- classifier ---------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierSettings:
    step: float = 0.1
    iterations: int = 300
    l2: float = 1e-4
    std_floor: float = 1e-8


@dataclass(frozen=True, eq=False)
class SoftmaxModel:
    classes: np.ndarray  # class code per output column
    present: np.ndarray  # bool per column; classes absent from training are never predicted
    mean: np.ndarray
    std: np.ndarray
    weights: np.ndarray
    bias: np.ndarray

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.mean) / self.std
        return x @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = self.logits(features)
        z = np.where(self.present, z, -np.inf)
        return self.classes[np.argmax(z, axis=1)]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, onehot: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus (l2/2)*||W||^2, with its gradients w.r.t. W and b."""
    n = x.shape[0]
    probs = _softmax(x @ weights + bias)
    loss = -np.sum(onehot * np.log(np.clip(probs, 1e-300, None))) / n + 0.5 * l2 * np.sum(weights**2)
    residual = (probs - onehot) / n
    return float(loss), x.T @ residual + l2 * weights, residual.sum(axis=0)


def train_classifier(
    train: Dataset,
    settings: ClassifierSettings = ClassifierSettings(),
    label_set: Iterable[int] | None = None,
) -> SoftmaxModel:
    """Full-batch gradient descent on a multinomial logistic model, zero init."""
    classes = np.array(sorted(set(label_set or ()) | train.label_set | set(train.labels.tolist())), dtype=np.int64)
    k, m = len(classes), train.m
    if not len(train):
        # constant model: always the first class; callers score empty training sets as chance
        present = np.zeros(k, dtype=bool)
        if k:
            present[0] = True
        return SoftmaxModel(classes, present, np.zeros(m), np.ones(m), np.zeros((m, k)), np.zeros(k))
    x = train.features
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), settings.std_floor)
    x = (x - mean) / std
    col = np.searchsorted(classes, train.labels)
    onehot = np.zeros((len(train), k))
    onehot[np.arange(len(train)), col] = 1.0
    weights, bias = np.zeros((m, k)), np.zeros(k)
    for _ in range(settings.iterations):
        _, gw, gb = softmax_loss_and_grad(weights, bias, x, onehot, settings.l2)
        weights -= settings.step * gw
        bias -= settings.step * gb
    present = np.isin(classes, train.labels)
    return SoftmaxModel(classes, present, mean, std, weights, bias)


def accuracy(model: SoftmaxModel, test: Dataset) -> Fraction:
    correct = int(np.sum(model.predict(test.features) == test.labels))
    return Fraction(correct, len(test))


class ClassifierOracle(AccuracyOracle):
    """Accuracy of a softmax regression trained on the subset, on a fixed test set."""

    kind = "classifier"

    def __init__(
        self,
        test_set: Dataset,
        settings: ClassifierSettings = ClassifierSettings(),
        label_set: Iterable[int] | None = None,
    ):
        super().__init__()
        if not len(test_set):
            raise ConfigurationError("classifier oracle needs a non-empty test set")
        self.test_set = test_set
        self.settings = settings
        self.label_set = frozenset(label_set) if label_set is not None else test_set.label_set
        if not self.label_set:
            raise ConfigurationError("classifier oracle needs a non-empty label set")

    def params(self):
        return {
            **asdict(self.settings),
            "labels": sorted(self.label_set),
            "test_set": self.test_set.digest,
        }

    def default_epsilon(self) -> float:
        # accuracy moves in steps of 1/|test set|
        return 0.5 / len(self.test_set)

    @property
    def chance(self) -> Fraction:
        return Fraction(1, len(self.label_set))

    def score(self, train: Dataset) -> Fraction:
        """Accuracy after training on ``train``; an empty training set scores chance."""
        if not len(train):
            return self.chance
        return accuracy(train_classifier(train, self.settings, self.label_set), self.test_set)

    def _compute(self, state, users):
        return self.score(state.dataset(users))


ORACLE_KINDS = ("additive", "diminishing", "harm", "classifier")


def make_oracle(spec: Mapping[str, Any], test_set: Dataset | None = None) -> AccuracyOracle:
    """Build an oracle from a config block such as ``{"kind": "harm", "weights": {...}, "rho": 8}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in ORACLE_KINDS:
        raise ConfigurationError(f"oracle kind must be one of {', '.join(ORACLE_KINDS)}, got {kind!r}")
    for split_key in ("test_fraction", "split_seed", "test"):
        spec.pop(split_key, None)
    try:
        if kind == "classifier":
            if test_set is None:
                raise ConfigurationError("classifier oracle needs a test set")
            labels = spec.pop("labels", None)
            return ClassifierOracle(test_set, ClassifierSettings(**spec), labels)
        weights = {int(u): float(w) for u, w in dict(spec.pop("weights", {})).items()}
        if kind == "harm":
            return HarmOracle(weights, **spec)
        if spec:
            raise TypeError(f"unexpected keys {sorted(spec)}")
        return AdditiveOracle(weights) if kind == "additive" else DiminishingOracle(weights)
    except TypeError as exc:
        raise ConfigurationError(f"bad {kind} oracle parameters: {exc}") from None
