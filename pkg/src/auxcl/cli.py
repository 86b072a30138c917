"""Command-line entry points: `auxcl run` and `auxcl report`.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
failures. The AUXCL_RESULTS_DIR environment variable supplies the default
output directory when the config leaves it unset.
"""

import argparse
import os
import sys

from .config import load_config
from .errors import ConfigError, FormatError
from .experiments import aggregate, render_report, run_experiment

ENV_OUTPUT_DIR = "AUXCL_RESULTS_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auxcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment grid")
    run_p.add_argument("--config", required=True, help="path to a TOML experiment config")
    run_p.add_argument("--dry-run", action="store_true", help="validate without training")
    run_p.add_argument("--workers", type=int, default=None, help="parallel worker processes")

    rep_p = sub.add_parser("report", help="aggregate a results directory")
    rep_p.add_argument("results_dir", help="directory containing metrics.csv")
    rep_p.add_argument("--format", choices=("csv", "text"), default="text")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, env_output_dir=os.environ.get(ENV_OUTPUT_DIR))
            n = run_experiment(cfg, dry_run=args.dry_run, workers=args.workers)
            if args.dry_run:
                print(f"config ok: {len(cfg.grid)} grid cells x {len(cfg.seeds)} seeds = {n} runs")
            else:
                print(f"completed {n} runs -> {cfg.output_dir}")
        else:
            print(render_report(aggregate(args.results_dir), fmt=args.format), end="")
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
