"""Command line runner: ``wrot run CONFIG`` and ``wrot list-experiments``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import REGISTRY, Context, describe

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
TOP_LEVEL = {"experiment": str, "dim": int, "basis": str, "samples": int, "seed": int,
             "tolerances": dict, "params": dict}
DEFAULTS = {"dim": 3, "basis": "coordinate", "samples": 100_000, "seed": 0, "tolerances": {}, "params": {}}
CSV_COLUMNS = ("name", "paper_anchor", "value", "tolerance", "verdict")


class ConfigError(Exception):
    pass


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return 1


def _type_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, type(default))


def load_config(path: str | Path, seed_override: int | None = None) -> dict:
    """Parse and validate a config file; errors carry ``path:line:`` prefixes."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:1: cannot read config ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    for key, value in raw.items():
        if key not in TOP_LEVEL:
            raise ConfigError(f"{path}:{_line_of(text, key)}: unknown key {key!r}")
        if not _type_ok(value, TOP_LEVEL[key]()):
            raise ConfigError(f"{path}:{_line_of(text, key)}: {key!r} must be of type {TOP_LEVEL[key].__name__}")
    if "experiment" not in raw:
        raise ConfigError(f"{path}:1: missing key 'experiment'")
    name = raw["experiment"]
    if name not in REGISTRY:
        raise ConfigError(f"{path}:{_line_of(text, 'experiment')}: unknown experiment {name!r}")
    cfg = {**DEFAULTS, **raw}
    declared = REGISTRY[name].params
    params = dict(declared)
    for key, value in raw.get("params", {}).items():
        if key not in declared:
            raise ConfigError(f"{path}:{_line_of(text, key)}: unknown parameter {key!r} for {name}")
        if not _type_ok(value, declared[key]):
            raise ConfigError(f"{path}:{_line_of(text, key)}: parameter {key!r} has the wrong type")
        params[key] = float(value) if isinstance(declared[key], float) else value
    cfg["params"] = params
    for key, value in cfg["tolerances"].items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}:{_line_of(text, key)}: tolerance {key!r} must be a number")
    if cfg["dim"] < 1 or cfg["samples"] < 1:
        raise ConfigError(f"{path}:{_line_of(text, 'dim')}: dim and samples must be positive")
    if cfg["basis"] not in ("coordinate", "haar"):
        raise ConfigError(f"{path}:{_line_of(text, 'basis')}: basis must be 'coordinate' or 'haar'")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def run_config(cfg: dict, workers: int = 1) -> dict:
    """Run an already validated config and return the report dictionary."""
    start = time.perf_counter()
    ctx = Context(cfg["dim"], cfg["basis"], cfg["samples"], cfg["seed"], workers, cfg["tolerances"])
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        REGISTRY[cfg["experiment"]].run(ctx, cfg["params"])
    return {
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "checks": [c.as_dict() for c in ctx.checks],
        "wall_ms": round((time.perf_counter() - start) * 1000.0, 3),
        "version": __version__,
    }


def canonical(report: dict) -> str:
    """Report serialization without the wall-clock field; identical across reruns."""
    body = {k: v for k, v in report.items() if k != "wall_ms"}
    return json.dumps(body, sort_keys=True, indent=2)


def to_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for c in report["checks"]:
        writer.writerow({k: ("" if c[k] is None else c[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def _seed_override(flag: int | None) -> int | None:
    if flag is not None:
        return flag
    env = os.environ.get("WROT_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"WROT_SEED must be an integer, got {env!r}") from None


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, _seed_override(args.seed))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_config(cfg, workers=args.workers)
    except (FloatingPointError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"error: {args.config}:1: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        (out / "report.csv").write_text(to_csv(report))
    else:
        (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    for c in report["checks"]:
        print(f"{c['verdict']:5s} {c['name']}: {c['value']} (tol {c['tolerance']})")
    failed = [c for c in report["checks"] if c["verdict"] == "fail"]
    return EXIT_ASSERT if failed else EXIT_OK


def cmd_list(args) -> int:
    rows = describe()
    if args.format == "json":
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        print(f"{r['name']:<{width}}  {r['paper_anchor']}")
        print(f"{'':<{width}}  params: {json.dumps(r['params'])}")
        print(f"{'':<{width}}  gating: {r['gating']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wrot", description="Rotations of Gaussian space: experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config")
    run.add_argument("--out", default=".")
    run.add_argument("--format", choices=("json", "csv"), default="json")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=cmd_run)
    ls = sub.add_parser("list-experiments", help="list experiment families")
    ls.add_argument("--format", choices=("text", "json"), default="text")
    ls.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
