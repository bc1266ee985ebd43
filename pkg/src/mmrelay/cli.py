"""Command line entry point: ``mmrelay run|list|validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import ScenarioConfigError, builtin_scenarios, load_scenario, run_scenario

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _resolve(arg: str):
    """A config path, or the name of a builtin scenario."""
    path = Path(arg)
    if path.exists():
        return load_scenario(path)
    for scn in builtin_scenarios():
        if scn.name == arg:
            return scn
    raise FileNotFoundError(f"{arg}: no such config file or builtin scenario")


def _cmd_run(args) -> int:
    scn = _resolve(args.config)
    res = run_scenario(scn, out_dir=args.out, paper_scale=args.paper_scale, trials=args.trials, seed=args.seed)
    print(f"wrote {res.csv_path}" + (f" and {res.svg_path}" if res.svg_path else ""))
    if res.n_failed:
        print(f"{res.n_failed} point(s) failed", file=sys.stderr)
        return EXIT_ERROR
    if res.n_infeasible:
        print(f"{res.n_infeasible} point(s) infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_list(args) -> int:
    for scn in builtin_scenarios():
        if args.write:
            out = Path(args.write)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{scn.name}.toml").write_text(scn.to_toml(), encoding="utf-8")
        print(f"{scn.name:16s} {scn.sweep_var:13s} {scn.mode:7s} {scn.description}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    scn = _resolve(args.config)
    print(f"{scn.name}: ok ({len(scn.grid)} grid points, schemes {', '.join(scn.schemes)}, mode {scn.mode})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmrelay", description="Two-way full-duplex relay EE experiments")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config (or builtin name)")
    run.add_argument("config")
    run.add_argument("--paper-scale", action="store_true", help="run at full scale (N and K from paper_N, paper_K)")
    run.add_argument("--trials", type=int, default=None, help="override Monte-Carlo trials")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=".", help="output directory (default: current)")
    run.set_defaults(func=_cmd_run)

    ls = sub.add_parser("list", help="list builtin scenarios")
    ls.add_argument("--write", metavar="DIR", help="also write each builtin as <DIR>/<name>.toml")
    ls.set_defaults(func=_cmd_list)

    val = sub.add_parser("validate", help="parse and validate a config without running it")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
