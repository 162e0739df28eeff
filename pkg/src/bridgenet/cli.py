"""``bridgenet`` command-line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import harness
from .errors import BridgeNetError

COMMANDS = {
    "simulate": harness.cmd_simulate,
    "calibrate": harness.cmd_calibrate,
    "evaluate": harness.cmd_evaluate,
    "fit": harness.cmd_fit,
    "polarize": harness.cmd_polarize,
    "metrics-compare": harness.cmd_metrics_compare,
}

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bridgenet", description="Markov bridge models of network segregation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--jobs", type=int, help="worker processes for replications")
    p.add_argument("--out", help="existing output directory")
    p.add_argument("--sequences", help="fit: CSV with sequence_id,t,y")
    p.add_argument("--retweets", help="polarize: day<TAB>retweeter<TAB>author file")
    p.add_argument("--seed-accounts", help="polarize: CSV with account,party")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig.load(args.config)
    overrides = {
        "seed": args.seed, "jobs": args.jobs, "out": args.out, "sequences": args.sequences,
        "retweets": args.retweets, "seed_accounts": args.seed_accounts,
    }
    return dataclasses.replace(config, **{k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        COMMANDS[args.command](config)
    except BridgeNetError as exc:
        print(f"bridgenet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"bridgenet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, UnicodeDecodeError) as exc:
        print(f"bridgenet: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"bridgenet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
