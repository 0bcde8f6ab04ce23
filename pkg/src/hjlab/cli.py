"""Command line: ``hjlab run <config>`` and ``hjlab check [<config-dir>]``.

Exit status: 0 success, 2 invalid config (or no configs found), 3 numerical
failure, 4 a check failed (``run --check`` or ``check``). Errors are also
written to stderr as one JSON line {"error": <category>, "message": ...}.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .scenarios import NUMERICAL_ERRORS, ConfigError, apply_overrides, load_config, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4


def default_config_dir() -> Path:
    return Path(str(resources.files("hjlab") / "configs"))


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="ensemble master seed")
    common.add_argument("--particles", type=int, help="ensemble size")
    common.add_argument("--gamma", type=float, help="sign flip rate")
    common.add_argument("--hbar-eff", type=float, dest="hbar_eff", help="effective Planck constant")
    common.add_argument("--output-dir", dest="output_dir", help="artifact directory (per scenario for check)")
    r = sub.add_parser("run", parents=[common], help="run one scenario config (or a run manifest)")
    r.add_argument("config")
    r.add_argument("--check", action="store_true", help="exit 4 if any acceptance check fails")
    c = sub.add_parser("check", parents=[common], help="run every *.json config in a directory")
    c.add_argument("config_dir", nargs="?", help="defaults to the bundled configs")
    return p


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("seed", "particles", "gamma", "hbar_eff")}


def _run(args) -> int:
    try:
        cfg = apply_overrides(load_config(args.config), output_dir=args.output_dir, **_overrides(args))
        result = run_scenario(cfg)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except NUMERICAL_ERRORS as exc:
        return _fail("numerical", f"{type(exc).__name__}: {exc}", EXIT_NUMERICAL)
    print(f"[{cfg.name}] artifacts in {cfg.output_dir}")
    for c in result.checks:
        print(f"  {c.line()}")
    for w in result.warnings:
        print(f"  warning: {w}", file=sys.stderr)
    if args.check and not result.passed:
        return EXIT_CHECK
    return EXIT_OK


def _check(args) -> int:
    root = Path(args.config_dir) if args.config_dir else default_config_dir()
    paths = sorted(root.glob("*.json")) if root.is_dir() else []
    if not paths:
        return _fail("config", f"no *.json configs in {root}", EXIT_CONFIG)
    worst = EXIT_OK
    rows = []
    for path in paths:
        try:
            cfg = load_config(path)
            out = Path(args.output_dir) / cfg.name if args.output_dir else None
            cfg = apply_overrides(cfg, output_dir=out, **_overrides(args))
            result = run_scenario(cfg)
        except ConfigError as exc:
            _fail("config", f"{path.name}: {exc}", EXIT_CONFIG)
            worst = max(worst, EXIT_CONFIG)
            continue
        except NUMERICAL_ERRORS as exc:
            _fail("numerical", f"{path.name}: {type(exc).__name__}: {exc}", EXIT_NUMERICAL)
            worst = max(worst, EXIT_NUMERICAL)
            continue
        for c in result.checks:
            rows.append(f"{cfg.name:<18} {c.line()}")
        if not result.passed:
            worst = max(worst, EXIT_CHECK)
    print("\n".join(rows))
    return worst


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    return _run(args) if args.command == "run" else _check(args)


if __name__ == "__main__":
    sys.exit(main())
