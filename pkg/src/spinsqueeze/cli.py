"""Command-line entry point: one subcommand per experiment kind.

Each subcommand takes a JSON config file (or builds a minimal one from
flags), executes it through the runner, and prints the manifest path and
summary.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import runs
from .dynamics import IntegrationError
from .runs import ConfigError
from .squeezing import MeanSpinDegenerateError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config (or manifest to replay)")
    p.add_argument("--out-root", help=f"output root (default $"
                                      f"{runs.ENV_OUT_ROOT} or ./results)")
    p.add_argument("--name", help="run directory name (default: kind-hash)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--force", action="store_true",
                   help="recompute even if an identical run exists")
    p.add_argument("--set", action="append", default=[], metavar="PATH=JSON",
                   help="override a config entry, e.g. --set model.n_spins=8 "
                        "or --set sweep.step=0.05")


def _apply_override(raw: dict, spec: str):
    if "=" not in spec:
        raise ConfigError(f"bad override {spec!r}; expected path=value")
    path, val = spec.split("=", 1)
    try:
        value = json.loads(val)
    except json.JSONDecodeError:
        value = val
    keys = path.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into '{k}' in override {spec!r}")
    node[keys[-1]] = value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinsqueeze",
        description="spin-squeezing control experiments: scans, training, "
                    "combined strategy, effective-model validation")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in runs.RUN_KINDS:
        p = sub.add_parser(kind, help=f"run a '{kind}' experiment")
        _add_common(p)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config) as f:
                raw = json.load(f)
            if "resolved_config" not in raw:
                raw.setdefault("kind", args.kind)
                if raw["kind"] != args.kind:
                    raise ConfigError(
                        f"config kind {raw['kind']!r} does not match "
                        f"subcommand {args.kind!r}")
        else:
            raw = {"kind": args.kind}
        if "resolved_config" not in raw:
            if args.seed is not None:
                raw["seed"] = args.seed
            if args.name:
                raw["name"] = args.name
            for spec in args.set:
                _apply_override(raw, spec)
        manifest = runs.run(raw, out_root=args.out_root, force=args.force)
    except (IntegrationError, MeanSpinDegenerateError, RuntimeError,
            ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True, default=str))
    print(f"artifacts: {manifest['outdir']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
