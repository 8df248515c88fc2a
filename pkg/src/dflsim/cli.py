"""Command-line entry points: run one experiment, sweep a parameter, or
run the randomized self-checks.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed
self-check.  The ``DFL_SEED`` environment variable overrides the config
seed; a ``--seed`` flag overrides both.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .aggregation import AggregationRule
from .core import ConfigError, RoleConfig
from .reporting import SWEEP_PARAMETERS, SweepSpec, run_sweep, write_records
from .simulation import (
    AttackConfig,
    CsvDataConfig,
    ExperimentConfig,
    PartitionConfig,
    SyntheticDataConfig,
    TrainerConfig,
    run_experiment,
)
from .verify import run_all

# config keys that rename to python identifiers
_ATTACK_KEYS = {"lambda": "lam"}


def _build(cls, doc: dict, path: str, renames: dict | None = None, nested: dict | None = None):
    """Construct a config dataclass from a JSON mapping with path-tagged errors."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object, got {type(doc).__name__}")
    renames = renames or {}
    nested = nested or {}
    field_names = {f.name for f in dataclasses.fields(cls)}
    allowed = (field_names - set(renames.values())) | set(renames)
    kwargs = {}
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key (expected one of {sorted(allowed)})")
        name = renames.get(key, key)
        if name in nested and value is not None:
            value = nested[name](value, f"{path}.{key}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_rule(doc, path: str) -> AggregationRule:
    return _build(AggregationRule, doc, path)


def _parse_data(doc, path: str):
    if not isinstance(doc, dict) or len(doc) != 1 or next(iter(doc)) not in ("synthetic", "csv"):
        raise ConfigError(f"{path}: expected exactly one of 'synthetic' or 'csv'")
    key, body = next(iter(doc.items()))
    if key == "synthetic":
        return _build(SyntheticDataConfig, body, f"{path}.synthetic")
    return _build(CsvDataConfig, body, f"{path}.csv")


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate a JSON config document into an :class:`ExperimentConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    sections = {
        "roles": lambda d, p: _build(RoleConfig, d, p),
        "rule": _parse_rule,
        "attack": lambda d, p: _build(AttackConfig, d, p, renames=_ATTACK_KEYS, nested={"selfish_rule": _parse_rule}),
        "trainer": lambda d, p: _build(TrainerConfig, d, p),
        "partition": lambda d, p: _build(PartitionConfig, d, p),
        "data": _parse_data,
    }
    kwargs = {}
    for key, value in doc.items():
        if key in sections:
            kwargs[key] = sections[key](value, key)
        elif key in ("rounds", "seed", "output"):
            if key != "output":
                kwargs[key] = value
        else:
            raise ConfigError(f"{key}: unknown top-level key")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"top level: {exc}") from None


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Serialize a config (resolved defaults included) back to JSON form."""
    def rule_doc(rule: AggregationRule | None):
        return None if rule is None else dataclasses.asdict(rule)

    attack = dataclasses.asdict(cfg.attack)
    attack["lambda"] = attack.pop("lam")
    attack["selfish_rule"] = rule_doc(cfg.attack.selfish_rule)
    data_key = "synthetic" if isinstance(cfg.data, SyntheticDataConfig) else "csv"
    return {
        "roles": dataclasses.asdict(cfg.roles),
        "rule": rule_doc(cfg.rule),
        "attack": attack,
        "trainer": dataclasses.asdict(cfg.trainer),
        "partition": dataclasses.asdict(cfg.partition),
        "data": {data_key: dataclasses.asdict(cfg.data)},
        "rounds": cfg.rounds,
        "seed": cfg.seed,
    }


def load_config(path: str, seed_flag: int | None = None) -> tuple[ExperimentConfig, str | None]:
    """Read a JSON config file, applying seed overrides.

    Returns the config and the optional ``output`` directory it names.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    output = doc.get("output") if isinstance(doc, dict) else None
    if output is not None and not isinstance(output, str):
        raise ConfigError("output: expected a string path")
    cfg = config_from_dict(doc)
    env_seed = os.environ.get("DFL_SEED")
    if env_seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"DFL_SEED={env_seed!r} is not an integer") from None
    if seed_flag is not None:
        cfg = dataclasses.replace(cfg, seed=seed_flag)
    return cfg, output


def cmd_run(args) -> int:
    try:
        cfg, output = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or output or "out"
    try:
        records = run_experiment(cfg)
        os.makedirs(out_dir, exist_ok=True)
        write_records(records, os.path.join(out_dir, "records.csv"))
        final = records[-1]
        summary = {
            "rounds": cfg.rounds,
            "final": {
                "mtas": final.mtas,
                "mtans": final.mtans,
                "gap": final.gap,
                "attack_started": final.attack_started,
            },
            "config": config_to_dict(cfg),
        }
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    print(
        f"round {final.round}: mtas={final.mtas:.6f} mtans={final.mtans:.6f} "
        f"gap={final.gap:.6f} attack_started={str(final.attack_started).lower()}"
    )
    print(f"wrote {os.path.join(out_dir, 'records.csv')}")
    return 0


def _parse_values(parameter: str, text: str) -> tuple:
    caster = int if parameter in ("interval", "num_clients") else float
    try:
        return tuple(caster(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from None


def cmd_sweep(args) -> int:
    try:
        cfg, output = load_config(args.config, args.seed)
        values = _parse_values(args.param, args.values)
        spec = SweepSpec(parameter=args.param, values=values, repeats=args.repeats)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or output or "sweep"
    try:
        summary = run_sweep(cfg, spec, out_dir=out_dir, jobs=args.jobs, config_doc=config_to_dict(cfg))
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    for value, gap, mtas, mtans in zip(
        summary["values"], summary["mean_gap"], summary["mean_mtas"], summary["mean_mtans"]
    ):
        print(f"{args.param}={value}: mean_gap={gap:.6f} mean_mtas={mtas:.6f} mean_mtans={mtans:.6f}")
    print(f"wrote {os.path.join(out_dir, 'sweep_summary.json')}")
    return 0


def cmd_verify(args) -> int:
    try:
        results = run_all(trials=args.trials, seed=args.seed if args.seed is not None else 0)
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    failed = False
    for result in results:
        print(result.describe())
        if not result.passed:
            failed = True
            print(f"counterexample: {json.dumps(result.first_failure)}", file=sys.stderr)
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dflsim",
        description="Decentralized federated learning simulator with selfish model-crafting attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", help="path to the JSON config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out)")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep one parameter over a list of values")
    p_sweep.add_argument("config", help="path to the JSON config")
    p_sweep.add_argument("--param", required=True, choices=SWEEP_PARAMETERS, help="parameter to sweep")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--repeats", type=int, default=3, help="repeats per value (default 3)")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p_sweep.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sweep.add_argument("--out", default=None, help="output directory (default: config 'output' or ./sweep)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the randomized crafting self-checks")
    p_verify.add_argument("--trials", type=int, default=10_000, help="trials per identity suite")
    p_verify.add_argument("--seed", type=int, default=None, help="seed of the random instances")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
