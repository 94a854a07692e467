"""Accuracy and payoff experiments over privacy levels.

Every result type serializes to plot-ready CSV (one row per grid point or
user) and to JSON that parses back into an equal object.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .anonymizer import build_market, k_anonymity_level, reanonymize
from .core import COALITION_ID_BASE, Coalition, Dataset, MarketState, UserId
from .errors import ConfigurationError, ParameterError, ReportError
from .mechanism import (
    DEFAULT_EXACT_LIMIT,
    DEFAULT_PERMUTATIONS,
    PayoffReport,
    ShapleyResult,
    coalition_char_fn,
    coalition_payoff,
    shapley,
    vcg_payoff,
)
from .oracle import AccuracyOracle, ClassifierOracle

REFINE_TOLERANCE = 1e-3


def _check_grid(user: UserId, grid: Sequence[float]) -> tuple[float, ...]:
    grid = tuple(float(p) for p in grid)
    if not grid:
        raise ConfigurationError(f"privacy grid of user {user} is empty")
    if any(not (p >= 0 and math.isfinite(p)) for p in grid):
        raise ConfigurationError(f"privacy grid of user {user} has negative or non-finite values")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError(f"privacy grid of user {user} must be strictly increasing")
    return grid


@dataclass(frozen=True)
class SweepConfig:
    """Which users vary their privacy level, over which grid, with everyone else fixed.

    ``mode="each"`` sweeps the varying users one at a time (the others stay at
    their fixed level); ``mode="joint"`` moves all of them together along a
    shared grid.
    """

    varying: Mapping[UserId, Sequence[float]]
    fixed: Mapping[UserId, float] = field(default_factory=dict)
    seed: int = 0
    mode: str = "each"
    epsilon: float | None = None
    refine: bool = False

    def __post_init__(self):
        if not self.varying:
            raise ConfigurationError("a sweep needs at least one varying user")
        varying = {int(u): _check_grid(u, g) for u, g in sorted(self.varying.items())}
        object.__setattr__(self, "varying", varying)
        object.__setattr__(self, "fixed", {int(u): float(p) for u, p in sorted(self.fixed.items())})
        if any(p < 0 for p in self.fixed.values()):
            raise ConfigurationError("fixed privacy levels must be >= 0")
        if self.mode not in ("each", "joint"):
            raise ConfigurationError(f"sweep mode must be 'each' or 'joint', got {self.mode!r}")
        if self.mode == "joint" and len(set(varying.values())) > 1:
            raise ConfigurationError("joint sweeps need the same grid for every varying user")

    def to_dict(self) -> dict:
        return {
            "varying": [{"user": u, "grid": list(g)} for u, g in self.varying.items()],
            "fixed": [{"user": u, "p": p} for u, p in self.fixed.items()],
            "seed": self.seed,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "refine": self.refine,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SweepConfig":
        def _pairs(value, key):
            if isinstance(value, Mapping):
                return {int(u): v for u, v in value.items()}
            return {int(item["user"]): item[key] for item in value}

        known = {"varying", "fixed", "seed", "mode", "epsilon", "refine"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown sweep keys {sorted(unknown)}")
        return cls(
            varying=_pairs(d["varying"], "grid"),
            fixed=_pairs(d.get("fixed", {}), "p"),
            seed=int(d.get("seed", 0)),
            mode=d.get("mode", "each"),
            epsilon=d.get("epsilon"),
            refine=bool(d.get("refine", False)),
        )


@dataclass(frozen=True)
class SweepRow:
    user: UserId
    p: float
    f_full: float
    payoff: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    epsilon: float
    critical: dict[UserId, float | None]  # smallest grid p with payoff < -epsilon
    over_anonymization: dict[UserId, float | None]  # smallest grid p with payoff < 0
    refined: dict[UserId, float | None] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    kind = "sweep"
    csv_header = ("user", "p", "f_full", "payoff")

    def csv_rows(self) -> list[tuple]:
        return [(r.user, r.p, r.f_full, r.payoff) for r in self.rows]

    def series(self, user: UserId) -> list[SweepRow]:
        return [r for r in self.rows if r.user == user]

    def to_dict(self) -> dict:
        def _per_user(d):
            return [{"user": u, "p": p} for u, p in sorted(d.items())]

        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "rows": [asdict(r) for r in self.rows],
            "critical": _per_user(self.critical),
            "over_anonymization": _per_user(self.over_anonymization),
            "refined": _per_user(self.refined),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SweepResult":
        def _per_user(items):
            return {int(i["user"]): i["p"] for i in items}

        return cls(
            rows=tuple(SweepRow(**r) for r in d["rows"]),
            epsilon=d["epsilon"],
            critical=_per_user(d["critical"]),
            over_anonymization=_per_user(d["over_anonymization"]),
            refined=_per_user(d.get("refined", [])),
            config=d.get("config", {}),
        )


def _is_synthetic(oracle: AccuracyOracle) -> bool:
    return not isinstance(oracle, ClassifierOracle)


def _market_at(base: MarketState, true_data: Dataset, levels: Mapping[UserId, float]) -> MarketState:
    state = base
    for u, p in levels.items():
        if state.submissions[u].privacy != p:
            state = reanonymize(state, true_data, u, p)
    return state


def privacy_sweep(
    cfg: SweepConfig,
    true_data: Dataset,
    oracle: AccuracyOracle,
    users: Iterable[UserId] | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Re-anonymize the varying users at each grid level and record accuracy and payoffs.

    ``true_data`` is the un-noised training data (may be empty for synthetic
    oracles, in which case ``users`` names the market). Rows come out in grid
    order whatever ``jobs`` is.
    """
    base = build_market(true_data, cfg.fixed, cfg.seed, users=users)
    missing = set(cfg.varying) - set(base.users)
    if missing:
        raise ParameterError(f"varying users {sorted(missing)} are not in the market")
    eps = oracle.default_epsilon() if cfg.epsilon is None else float(cfg.epsilon)

    if cfg.mode == "joint":
        grid = next(iter(cfg.varying.values()))
        points = [(p, {u: p for u in cfg.varying}) for p in grid]
        tasks = [(u, p, levels) for p, levels in points for u in cfg.varying]
    else:
        tasks = [(u, p, {u: p}) for u, grid in cfg.varying.items() for p in grid]

    def run(task):
        user, p, levels = task
        state = _market_at(base, true_data, levels)
        return SweepRow(user, p, float(oracle.evaluate(state)), vcg_payoff(state, oracle, user))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, tasks))
    else:
        rows = [run(t) for t in tasks]
    rows.sort(key=lambda r: (r.user, r.p))

    critical, over, refined = {}, {}, {}
    for u in cfg.varying:
        series = [r for r in rows if r.user == u]
        critical[u] = next((r.p for r in series if r.payoff < -eps), None)
        over[u] = next((r.p for r in series if r.payoff < 0), None)
        if cfg.refine and _is_synthetic(oracle):
            refined[u] = _refine(base, true_data, oracle, cfg, u, series, eps)
    config = {**cfg.to_dict(), "oracle": {"kind": oracle.kind, **oracle.params()}}
    return SweepResult(tuple(rows), eps, critical, over, refined, config)


def _refine(base, true_data, oracle, cfg, user, series, eps) -> float | None:
    """Bisect between the last non-critical and first critical grid point."""
    crit = next((i for i, r in enumerate(series) if r.payoff < -eps), None)
    if crit is None:
        return None
    if crit == 0:
        return series[0].p
    lo, hi = series[crit - 1].p, series[crit].p
    joint = cfg.mode == "joint"

    def harmful(p: float) -> bool:
        levels = {u: p for u in cfg.varying} if joint else {user: p}
        return vcg_payoff(_market_at(base, true_data, levels), oracle, user) < -eps

    while hi - lo > REFINE_TOLERANCE:
        mid = 0.5 * (lo + hi)
        if harmful(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class StandaloneResult:
    accuracy: dict[UserId, float]
    records: dict[UserId, int]

    kind = "standalone"
    csv_header = ("user", "records", "accuracy")

    def csv_rows(self):
        return [(u, self.records[u], self.accuracy[u]) for u in sorted(self.accuracy)]

    def to_dict(self):
        return {"kind": self.kind, "users": [dict(zip(self.csv_header, r)) for r in self.csv_rows()]}

    @classmethod
    def from_dict(cls, d):
        return cls({int(r["user"]): r["accuracy"] for r in d["users"]},
                   {int(r["user"]): r["records"] for r in d["users"]})


def standalone_accuracy(state: MarketState, oracle: AccuracyOracle) -> StandaloneResult:
    """Accuracy of a model trained on each user's data alone, with record counts."""
    return StandaloneResult(
        {u: float(oracle.evaluate(state, [u])) for u in state.users},
        {u: len(state.submissions[u].data) for u in state.users},
    )


@dataclass(frozen=True)
class CoalitionReport:
    coalition_id: int
    members: tuple[UserId, ...]
    k: int
    coalition_payoff: float
    method: str
    shapley: dict[UserId, float]
    standalone: dict[UserId, float]  # each member's own marginal payoff
    stderr: dict[UserId, float] = field(default_factory=dict)
    permutations: int = 0
    levels: dict[UserId, float] = field(default_factory=dict)

    kind = "coalition"
    csv_header = ("user", "p", "standalone_payoff", "shapley", "k", "coalition_payoff")

    def csv_rows(self):
        return [
            (u, self.levels.get(u, 0.0), self.standalone[u], self.shapley[u], self.k, self.coalition_payoff)
            for u in self.members
        ]

    def to_dict(self):
        return {
            "kind": self.kind,
            "coalition_id": self.coalition_id,
            "k": self.k,
            "coalition_payoff": self.coalition_payoff,
            "shapley_sum": sum(self.shapley.values()),
            "method": self.method,
            "permutations": self.permutations,
            "members": [
                {
                    "user": u,
                    "p": self.levels.get(u, 0.0),
                    "standalone_payoff": self.standalone[u],
                    "shapley": self.shapley[u],
                    **({"stderr": self.stderr[u]} if u in self.stderr else {}),
                }
                for u in self.members
            ],
        }

    @classmethod
    def from_dict(cls, d):
        ms = d["members"]
        return cls(
            coalition_id=d["coalition_id"],
            members=tuple(int(m["user"]) for m in ms),
            k=d["k"],
            coalition_payoff=d["coalition_payoff"],
            method=d["method"],
            shapley={int(m["user"]): m["shapley"] for m in ms},
            standalone={int(m["user"]): m["standalone_payoff"] for m in ms},
            stderr={int(m["user"]): m["stderr"] for m in ms if "stderr" in m},
            permutations=d["permutations"],
            levels={int(m["user"]): m["p"] for m in ms},
        )


def ensure_coalition(state: MarketState, members: Iterable[UserId]) -> tuple[MarketState, Coalition]:
    """Find the coalition with exactly ``members`` or register a new one."""
    members = state.check_users(members)
    for c in state.coalitions:
        if c.members == members:
            return state, c
    taken = {c.id for c in state.coalitions}
    cid = next(i for i in range(COALITION_ID_BASE, COALITION_ID_BASE + len(taken) + 1) if i not in taken)
    coalition = Coalition(cid, members)
    return state.with_coalition(coalition), coalition


def coalition_experiment(
    state: MarketState,
    oracle: AccuracyOracle,
    members: Iterable[UserId],
    method: str = "exact",
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> CoalitionReport:
    """Coalition payoff, its Shapley split, and each member's standalone payoff side by side."""
    state, coalition = ensure_coalition(state, members)
    v = coalition_char_fn(state, oracle, coalition)
    result = shapley(v, coalition.members, method, permutations, seed, exact_limit)
    ordered = tuple(sorted(coalition.members))
    return CoalitionReport(
        coalition_id=coalition.id,
        members=ordered,
        k=k_anonymity_level(coalition),
        coalition_payoff=coalition_payoff(state, oracle, coalition),
        method=result.method,
        shapley=result.allocations,
        standalone={u: vcg_payoff(state, oracle, u) for u in ordered},
        stderr=result.stderr,
        permutations=result.permutations,
        levels={u: state.submissions[u].privacy for u in ordered},
    )


@dataclass(frozen=True)
class FilterReport:
    excluded: tuple[UserId, ...]  # in removal order
    retained: PayoffReport  # payoffs recomputed over the retained users

    kind = "filter"
    csv_header = ("user", "status", "payoff", "class")

    def csv_rows(self):
        rows = [(u, "retained", f, c) for u, f, c in self.retained.csv_rows()]
        return rows + [(u, "excluded", "", "") for u in self.excluded]

    def to_dict(self):
        return {"kind": self.kind, "excluded": list(self.excluded), "retained": self.retained.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["excluded"]), PayoffReport.from_dict(d["retained"]))


# -- report emission -------------------------------------------------------


def to_csv_string(result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.csv_header)
    for row in result.csv_rows():
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def to_json_string(result) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(result, fmt: str, path: str | os.PathLike) -> None:
    if fmt == "csv":
        text = to_csv_string(result)
    elif fmt == "json":
        text = to_json_string(result)
    else:
        raise ParameterError(f"report format must be csv or json, got {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"cannot write report to {os.fspath(path)}: {exc.strerror}") from None


REPORT_TYPES = {
    cls.kind: cls for cls in (SweepResult, StandaloneResult, CoalitionReport, PayoffReport, FilterReport, ShapleyResult)
}


def load_report(path: str | os.PathLike):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ReportError(f"cannot read report {os.fspath(path)}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ReportError(f"report {os.fspath(path)} is not valid JSON: {exc}") from None
    try:
        return REPORT_TYPES[data["kind"]].from_dict(data)
    except KeyError as exc:
        raise ReportError(f"report {os.fspath(path)} has no recognised kind ({exc})") from None
