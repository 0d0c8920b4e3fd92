"""Command-line front end: ``gtr run``, ``gtr preset`` and ``gtr sweep``.

Exit codes: 0 success, 1 an expectation failed, 2 schema or reference
error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import presets, scenario

EXIT_OK = 0
EXIT_EXPECTATION = 1
EXIT_SCHEMA = 2
EXIT_RUNTIME = 3

log = logging.getLogger("gtr")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise scenario.ScenarioError(f"cannot read scenario: {e.strerror}", path) from None


def cmd_run(args) -> int:
    try:
        doc = scenario.load(_read(args.file))
        scenario.build_context(doc)
    except scenario.ScenarioError as e:
        log.error("schema error: %s", e)
        return EXIT_SCHEMA
    try:
        result = scenario.execute(doc, workers=args.workers, trace=args.trace)
    except scenario.ScenarioError as e:
        log.error("schema error: %s", e)
        return EXIT_SCHEMA
    except (ValueError, RuntimeError, ArithmeticError) as e:
        log.error("runtime error: %s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    text = scenario.dumps_csv(result) if args.format == "csv" else scenario.dumps_json(result)
    _write(text, args.out)
    for c in result["expectations"]:
        if not c["passed"]:
            log.error("expectation failed: %s %s (%s, got %s)", c["request"], c["path"], c.get("check"),
                      c.get("actual", c.get("error")))
    return EXIT_OK if result["passed"] else EXIT_EXPECTATION


def cmd_preset(args) -> int:
    try:
        doc = presets.preset(args.name)
    except KeyError as e:
        log.error("%s", e.args[0])
        return EXIT_SCHEMA
    _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        text = _read(args.template)
        out = scenario.sweep(text, args.param, args.start, args.stop, args.steps, args.workers)
    except scenario.ScenarioError as e:
        log.error("schema error: %s", e)
        return EXIT_SCHEMA
    except (ValueError, RuntimeError, ArithmeticError) as e:
        log.error("runtime error: %s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    _write(out, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtr", description="Run GTR measurement scenarios.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("file")
    r.add_argument("--out", help="output path (default: stdout)")
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.add_argument("--workers", type=int, default=1, help="parallel Monte Carlo workers")
    r.add_argument("--trace", action="store_true", help="include per-run state trajectories")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("preset", help="write a built-in scenario")
    s.add_argument("name", choices=presets.NAMES)
    s.add_argument("--out", help="output path (default: stdout)")
    s.set_defaults(func=cmd_preset)

    w = sub.add_parser("sweep", help="run a template over a parameter grid, CSV output")
    w.add_argument("--param", required=True, help="name of a template parameter, e.g. eps, theta or n")
    w.add_argument("--from", dest="start", type=float, required=True)
    w.add_argument("--to", dest="stop", type=float, required=True)
    w.add_argument("--steps", type=int, required=True)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", help="output path (default: stdout)")
    w.add_argument("template")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="gtr: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        log.error("--workers must be at least 1")
        return EXIT_SCHEMA
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
