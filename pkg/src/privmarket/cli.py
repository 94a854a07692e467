"""Command-line entry point.

Every option can also come from a flat JSON file given with ``--config``;
explicit flags win over the file, and ``PRIVMARKET_SEED`` is the last fallback
for ``--seed``. Exit status: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Any, Sequence

from . import __version__
from .anonymizer import GaussianNoiseSpec, anonymize, build_market
from .core import Dataset
from .errors import PrivMarketError
from .experiments import (
    FilterReport,
    SweepConfig,
    coalition_experiment,
    emit_report,
    ensure_coalition,
    load_report,
    privacy_sweep,
    standalone_accuracy,
    to_csv_string,
    to_json_string,
)
from .ingestion import SplitSpec, parse_raw, split, windowize
from .mechanism import (
    DEFAULT_EXACT_LIMIT,
    DEFAULT_PERMUTATIONS,
    coalition_shapley,
    filter_negative_contributors,
    payoffs_all,
)
from .oracle import make_oracle

log = logging.getLogger("privmarket")

SEED_ENV = "PRIVMARKET_SEED"
COMMANDS = (
    "ingest", "anonymize", "accuracy", "payoffs", "filter",
    "coalition", "coalition-exp", "standalone", "sweep", "report",
)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    dataset: str | None = None
    test: str | None = None
    out: str | None = None
    json: str | None = None
    format: str | None = None
    oracle: dict[str, Any] | None = None
    privacy: dict[int, float] = field(default_factory=dict)
    p: float | None = None
    seed: int = 0
    split_seed: int | None = None
    test_fraction: float = 0.3
    epsilon: float | None = None
    members: tuple[int, ...] = ()
    method: str = "exact"
    permutations: int = DEFAULT_PERMUTATIONS
    exact_limit: int = DEFAULT_EXACT_LIMIT
    window: int = 200
    downsample: int = 5
    varying: dict[int, tuple[float, ...]] = field(default_factory=dict)
    mode: str = "each"
    refine: bool = False
    jobs: int = 1

    def echo(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


# -- value grammars ----------------------------------------------------------


def parse_privacy(text: str) -> dict[int, float]:
    """``"2:4,3:8"`` -> {2: 4.0, 3: 8.0}; a user may appear only once."""
    levels: dict[int, float] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            user, level = item.split(":")
            user, level = int(user), float(level)
        except ValueError:
            raise UsageError(f"bad privacy entry {item!r}; expected USER:LEVEL") from None
        if user in levels:
            raise UsageError(f"user {user} given twice in privacy levels")
        if not level >= 0:
            raise UsageError(f"privacy level of user {user} must be >= 0")
        levels[user] = level
    return levels


def parse_members(text: str) -> tuple[int, ...]:
    try:
        members = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"bad member list {text!r}; expected e.g. 2,3") from None
    if len(set(members)) != len(members):
        raise UsageError("duplicate coalition member")
    return members


def parse_vary(items: Sequence[str]) -> dict[int, tuple[float, ...]]:
    """Repeated ``USER=P1,P2,...`` flags."""
    grids: dict[int, tuple[float, ...]] = {}
    for item in items:
        try:
            user, grid = item.split("=")
            grids[int(user)] = tuple(float(p) for p in grid.split(","))
        except ValueError:
            raise UsageError(f"bad --vary value {item!r}; expected USER=P1,P2,...") from None
    return grids


def parse_oracle(value: Any) -> dict[str, Any]:
    """Oracle spec: a JSON object, a path to a JSON file, or ``kind;key=value;...``."""
    if isinstance(value, dict):
        return dict(value)
    text = str(value).strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad oracle JSON: {exc}") from None
    if os.path.isfile(text):
        with open(text) as fh:
            return json.load(fh)
    kind, *pairs = [s.strip() for s in text.split(";") if s.strip()]
    spec: dict[str, Any] = {"kind": kind}
    for pair in pairs:
        key, _, raw = pair.partition("=")
        if key == "weights":
            spec[key] = {int(u): float(w) for u, w in (e.split(":") for e in raw.split(","))}
        elif key == "labels":
            spec[key] = [int(c) for c in raw.split(",")]
        else:
            try:
                spec[key] = json.loads(raw)
            except json.JSONDecodeError:
                raise UsageError(f"bad oracle parameter {pair!r}") from None
    return spec


def _coerce(key: str, value: Any) -> Any:
    """Normalize a config-file or flag value to the RunConfig field type."""
    if value is None:
        return None
    if key == "privacy":
        return parse_privacy(value) if isinstance(value, str) else {int(u): float(p) for u, p in value.items()}
    if key == "members":
        return parse_members(value) if isinstance(value, str) else tuple(int(u) for u in value)
    if key == "varying":
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return parse_vary(value)
        if isinstance(value, list):
            return {int(v["user"]): tuple(float(p) for p in v["grid"]) for v in value}
        return {int(u): tuple(float(p) for p in g) for u, g in value.items()}
    if key == "oracle":
        return parse_oracle(value)
    return value


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=None)
    common.add_argument("--config", help="JSON file with default values for any option")
    common.add_argument("--seed", type=int, help=f"noise seed (falls back to ${SEED_ENV}, then 0)")
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--json", help="JSON summary output path")
    common.add_argument("--jobs", type=int, help="worker threads; results do not depend on it")
    common.add_argument("-v", "--verbose", action="store_true", default=False)

    market = argparse.ArgumentParser(add_help=False, argument_default=None)
    market.add_argument("--dataset", help="dataset CSV (owner,label,f0,...)")
    market.add_argument("--privacy", help='per-user noise variance, e.g. "2:4,3:8"')
    market.add_argument("--oracle", help="oracle spec: JSON, JSON file, or kind;key=value;...")
    market.add_argument("--test", help="held-out test set CSV for the classifier oracle")
    market.add_argument("--test-fraction", dest="test_fraction", type=float)
    market.add_argument("--split-seed", dest="split_seed", type=int)
    market.add_argument("--epsilon", type=float)

    shap = argparse.ArgumentParser(add_help=False, argument_default=None)
    shap.add_argument("--members", help="coalition members, e.g. 2,3")
    shap.add_argument("--method", choices=("exact", "mc"))
    shap.add_argument("--permutations", type=int)
    shap.add_argument("--exact-limit", dest="exact_limit", type=int)

    parser = argparse.ArgumentParser(
        prog="privmarket", description="Privacy-aware payoffs for crowdsensing data markets."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="window raw WISDM accelerometer data")
    p.add_argument("--input")
    p.add_argument("--window", type=int)
    p.add_argument("--downsample", type=int)

    p = sub.add_parser("anonymize", parents=[common], help="add Gaussian noise to a dataset")
    p.add_argument("--dataset")
    p.add_argument("--p", type=float)

    sub.add_parser("accuracy", parents=[common, market], help="accuracy of the full anonymized data")
    sub.add_parser("payoffs", parents=[common, market], help="per-user marginal payoffs")
    sub.add_parser("filter", parents=[common, market], help="exclude negative contributors")
    sub.add_parser("coalition", parents=[common, market, shap], help="Shapley split of a coalition payoff")
    sub.add_parser("coalition-exp", parents=[common, market, shap], help="coalition vs standalone payoffs")
    sub.add_parser("standalone", parents=[common, market], help="per-user standalone accuracy")

    p = sub.add_parser("sweep", parents=[common, market], help="accuracy/payoff vs privacy sweep")
    p.add_argument("--vary", action="append", dest="varying", help="USER=P1,P2,... (repeatable)")
    p.add_argument("--mode", choices=("each", "joint"))
    p.add_argument("--refine", action="store_true", default=None)

    p = sub.add_parser("report", parents=[common], help="re-emit a JSON report")
    p.add_argument("--input")
    p.add_argument("--format", choices=("csv", "json"))
    return parser


_REQUIRED = {
    "ingest": ("input", "out"),
    "anonymize": ("dataset", "p", "out"),
    "accuracy": ("oracle",),
    "payoffs": ("oracle",),
    "filter": ("oracle",),
    "coalition": ("oracle", "members"),
    "coalition-exp": ("oracle", "members"),
    "standalone": ("oracle",),
    "sweep": ("oracle", "varying"),
    "report": ("input",),
}


def parse_args(argv: Sequence[str] | None = None) -> RunConfig:
    """Merge flags, the ``--config`` file, the seed env var and defaults. Raises UsageError."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError("missing command; one of: " + ", ".join(COMMANDS))
    flags = {k: v for k, v in vars(ns).items() if v is not None and k not in ("command", "config", "verbose")}

    file_values: dict[str, Any] = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_values) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    merged: dict[str, Any] = {}
    for source in (file_values, flags):
        for key, value in source.items():
            try:
                merged[key] = _coerce(key, value)
            except (TypeError, ValueError, AttributeError) as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
    if "seed" not in merged and os.environ.get(SEED_ENV):
        try:
            merged["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer") from None

    missing = [k for k in _REQUIRED[ns.command] if merged.get(k) in (None, {}, ())]
    if missing:
        raise UsageError(f"{ns.command}: missing required option(s): " + ", ".join("--" + k for k in missing))
    return RunConfig(command=ns.command, **merged)


# -- execution -------------------------------------------------------------------


def _emit(result, cfg: RunConfig) -> None:
    if cfg.out:
        emit_report(result, "csv", cfg.out)
    else:
        sys.stdout.write(to_csv_string(result))
    if cfg.json:
        emit_report(result, "json", cfg.json)


def _load_market(cfg: RunConfig):
    """Build (true training data, market, oracle) from the config."""
    spec = dict(cfg.oracle or {})
    kind = spec.get("kind")
    data = Dataset.read_csv(cfg.dataset) if cfg.dataset else None
    test_set = None
    if kind == "classifier":
        if data is None:
            raise UsageError("the classifier oracle needs --dataset")
        test_path = cfg.test or spec.get("test")
        if test_path:
            test_set = Dataset.read_csv(test_path)
        else:
            fraction = float(spec.get("test_fraction", cfg.test_fraction))
            split_seed = cfg.split_seed if cfg.split_seed is not None else spec.get("split_seed", cfg.seed)
            data, test_set = split(data, SplitSpec(fraction, int(split_seed)))
            log.info("split: %d train / %d test records (seed %s)", len(data), len(test_set), split_seed)
    oracle = make_oracle(spec, test_set)
    if data is None:
        users = sorted(int(u) for u in spec.get("weights", {}))
        data = Dataset.empty()
    else:
        users = data.owner_ids
    market = build_market(data, cfg.privacy, cfg.seed, users=users)
    return data, market, oracle, users


def run(cfg: RunConfig) -> int:
    log.info("command %s, seed %d", cfg.command, cfg.seed)
    log.info("config %s", json.dumps(cfg.echo(), sort_keys=True, default=str))
    cmd = cfg.command

    if cmd == "ingest":
        with open(cfg.input) as fh:
            series = parse_raw(fh)
        data = windowize(series, cfg.window, cfg.downsample)
        log.info("ingested %d samples from %d users -> %d records of %d features",
                 series.sample_count, len(series.users), len(data), data.m)
        data.to_csv(cfg.out)
        return 0

    if cmd == "anonymize":
        data = Dataset.read_csv(cfg.dataset)
        anonymize(data, GaussianNoiseSpec(cfg.p, cfg.seed)).to_csv(cfg.out)
        return 0

    if cmd == "report":
        result = load_report(cfg.input)
        text = to_json_string(result) if cfg.format == "json" else to_csv_string(result)
        if cfg.out:
            emit_report(result, cfg.format or "csv", cfg.out)
        else:
            sys.stdout.write(text)
        return 0

    data, market, oracle, users = _load_market(cfg)

    if cmd == "accuracy":
        summary = {"kind": "accuracy", "f_full": float(oracle.evaluate(market)), "users": list(market.users)}
        text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
        for path in filter(None, (cfg.json, cfg.out)):
            with open(path, "w") as fh:
                fh.write(text)
        if not (cfg.json or cfg.out):
            sys.stdout.write(text)
    elif cmd == "payoffs":
        _emit(payoffs_all(market, oracle, cfg.epsilon), cfg)
    elif cmd == "filter":
        retained, excluded = filter_negative_contributors(market, oracle, cfg.epsilon)
        _emit(FilterReport(tuple(excluded), payoffs_all(retained, oracle, cfg.epsilon)), cfg)
    elif cmd == "coalition":
        market, coalition = ensure_coalition(market, cfg.members)
        _emit(coalition_shapley(market, oracle, coalition, method=cfg.method,
                                permutations=cfg.permutations, seed=cfg.seed, exact_limit=cfg.exact_limit), cfg)
    elif cmd == "coalition-exp":
        _emit(coalition_experiment(market, oracle, cfg.members, cfg.method,
                                   cfg.permutations, cfg.seed, cfg.exact_limit), cfg)
    elif cmd == "standalone":
        _emit(standalone_accuracy(market, oracle), cfg)
    elif cmd == "sweep":
        sweep_cfg = SweepConfig(cfg.varying, cfg.privacy, cfg.seed, cfg.mode, cfg.epsilon, cfg.refine)
        _emit(privacy_sweep(sweep_cfg, data, oracle, users=users, jobs=cfg.jobs), cfg)
    return 0


def _setup_logging(verbose: bool) -> None:
    # our own handler, so the seed is reported even when a host has configured the root logger
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("privmarket: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging("-v" in argv or "--verbose" in argv)
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    try:
        return run(cfg)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (PrivMarketError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
