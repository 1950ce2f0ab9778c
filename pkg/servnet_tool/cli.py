#!/usr/bin/env python3
"""
CLI entry point for servnet_tool

  servnet run data/scenarios/honest_pair.json --seed 7 --out data/runs
  servnet validate data/scenarios/rotation.json
  servnet attack-suite --disable nonce_cache
  servnet fairness --m1 20 --t2 100 --m2 10

Exit codes: 0 pass, 1 expectation or scenario failure, 2 usage or parse error.
"""
import argparse
import sys
from typing import List, Optional

from dotenv import load_dotenv

from servnet_sim.attacks import CONTROLS

from .core import EXIT_USAGE, cmd_attack_suite, cmd_fairness, cmd_run, cmd_validate
from .utils import configure_logging, resolve_out_dir


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="servnet", description="Simulate servnet reputation protocols.")
    parser.add_argument("--log-level", help="Python log level (default: SERVNET_LOG_LEVEL or WARNING)")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run_cmd = commands.add_parser("run", help="Run a scenario file")
    run_cmd.add_argument("scenario", help="Scenario JSON file")
    run_cmd.add_argument("--seed", type=int, help="Override the scenario's seed")
    run_cmd.add_argument("--out", help="Output directory (default: SERVNET_OUT_DIR or data/runs)")

    validate_cmd = commands.add_parser("validate", help="Check a scenario file without running it")
    validate_cmd.add_argument("scenario", help="Scenario JSON file")

    suite_cmd = commands.add_parser("attack-suite", help="Run the built-in attack scenarios")
    suite_cmd.add_argument("--out", help="Output directory (default: SERVNET_OUT_DIR or data/runs)")
    suite_cmd.add_argument("--disable", action="append", choices=CONTROLS, default=[],
                           help="Switch off a protocol check (negative control); repeatable")

    fairness_cmd = commands.add_parser("fairness", help="Fairness threshold table")
    fairness_cmd.add_argument("--m1", type=int, required=True, help="Peer 1 negative-score period")
    fairness_cmd.add_argument("--t2", type=int, required=True, help="Peer 2 transaction count")
    fairness_cmd.add_argument("--m2", type=int, required=True, help="Peer 2 negative-score period")
    fairness_cmd.add_argument("--t-max", type=int, help="Last T1 in the table (default: threshold + 10)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    if args.command == "run":
        return cmd_run(args.scenario, resolve_out_dir(args.out), args.seed)
    if args.command == "validate":
        return cmd_validate(args.scenario)
    if args.command == "attack-suite":
        return cmd_attack_suite(resolve_out_dir(args.out), args.disable)
    return cmd_fairness(args.m1, args.t2, args.m2, args.t_max)


if __name__ == "__main__":
    sys.exit(main())
