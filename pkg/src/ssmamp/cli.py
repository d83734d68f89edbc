"""
cli.py:  Command-line entry point.

    ssmamp run CONFIG [--out DIR] [--workers K] [--seed-offset S]
    ssmamp verify CONFIG [...]
    ssmamp se CONFIG [--out DIR]

Exit codes: 0 success, 1 finished with invariant violations, 2 invalid
config, 3 runtime failure (diagnostics.json is written to the output dir).
"""
from __future__ import annotations

import argparse
import sys
import time

from ssmamp.config import load_config
from ssmamp.errors import ConfigError
from ssmamp.experiments import (RunFailure, run_experiment, run_state_evolution, summary_text,
                                write_diagnostics)
from ssmamp.state_evolution import fixed_point

EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmamp",
        description="Sufficient-statistic damped memory AMP experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run all seeds and modes, write outputs, check invariants"),
                       ("verify", "run the invariant battery and print a verdict table"),
                       ("se", "state evolution only")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="INI experiment file")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (default: [output] dir)")
        if name != "se":
            p.add_argument("--workers", metavar="K", type=int, default=1,
                           help="parallel processes (default 1)")
            p.add_argument("--seed-offset", metavar="S", type=int, default=0,
                           help="add S to every configured seed")
    return parser


def _cmd_se(config, out_dir) -> int:
    from pathlib import Path

    se = run_state_evolution(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for mode, traj in se.items():
        (out / f"se_{mode}.csv").write_text(traj.to_csv())
        fp = fixed_point(traj)
        hit = fp.iterations_to_converge if fp.converged else "not converged"
        print(f"{mode:<10} v_gamma* {fp.v_gamma_star:.6e}  v_phi* {fp.v_phi_star:.6e}  "
              f"hit time {hit}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be >= 1")
        if getattr(args, "seed_offset", 0):
            config = config.with_seed_offset(args.seed_offset)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or config.out_dir

    if args.command == "se":
        return _cmd_se(config, out_dir)

    t0 = time.perf_counter()
    log = (lambda msg: print(msg, file=sys.stderr)) if args.command == "run" else None
    try:
        result = run_experiment(config, out_dir=out_dir, workers=args.workers, log=log)
    except RunFailure as exc:
        path = write_diagnostics(out_dir, exc.diagnostics)
        print(f"runtime failure: {exc.args[0]} (details in {path})", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary_text(result), end="")
    print(f"elapsed {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    if result.violations:
        print("violations: " + ", ".join(c.name for c in result.violations))
        return EXIT_VIOLATIONS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
