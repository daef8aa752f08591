"""Command line: ``modsorg solve|selforg|cluster-demo``.

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import run_cluster_demo, run_selforg, run_solve

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (section.key = value)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="modsorg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    solve = sub.add_parser("solve", parents=[common], help="exact solution of one navigation task")
    solve.add_argument("--task", type=int, required=True, help="task index 1..6")
    sub.add_parser("selforg", parents=[common], help="self-organize six tasks over the modules")
    sub.add_parser("cluster-demo", parents=[common], help="dynamic cluster on 2-D blobs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"modsorg: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or cfg.output_dir)
    if args.command == "solve" and not 1 <= args.task <= 6:
        print(f"modsorg: bad argument: task must be in 1..6, got {args.task}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "solve":
            ev = run_solve(cfg, args.task, out)
            print(f"task {args.task}: mean reward {ev.mean_reward:.4f}, success rate {ev.success_rate:.3f}")
        elif args.command == "selforg":
            summary = run_selforg(cfg, out)
            print(f"{summary.sweeps} sweeps, final assignment {summary.assignment.tolist()}")
        else:
            batch, online = run_cluster_demo(cfg, out)
            print(f"batch distortion {batch.state.distortion:.6g} after {batch.iterations} iterations; "
                  f"on-line {online.state.distortion:.6g} after {online.sweeps} sweeps")
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logging.getLogger("modsorg").debug("failure", exc_info=True)
        print(f"modsorg: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
