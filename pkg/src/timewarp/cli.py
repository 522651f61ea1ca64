"""Command-line entry points.

``timewarp run --config <file> [--backend inproc|tcp] [--out <csv>]
[--node <name>]`` runs an experiment; ``timewarp oracle --config <file>
--out <trace-file>`` writes the sequential reference trace for the same
configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile

from .oracle import run_sequential, save_trace
from .runner import (
    parse_config,
    run_experiment,
    run_tcp_node,
    write_csv,
)

log = logging.getLogger(__name__)


def _load_config(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.node:
        # one node of a distributed run; the config's first node aggregates
        metrics = run_tcp_node(cfg, args.node)
        if metrics is None:
            print(f"node {args.node}: done")
            return 0
        print(_summary_line(metrics))
        if args.out:
            from .runner import ExperimentResult
            write_csv(ExperimentResult(cfg, "tcp", (metrics,)), args.out)
        return 0
    with tempfile.TemporaryDirectory(prefix="timewarp-") as tmp:
        result = run_experiment(cfg, backend=args.backend, result_dir=tmp)
    for metrics in result.runs:
        print(_summary_line(metrics))
    if args.out:
        write_csv(result, args.out)
        print(f"wrote {args.out}")
    return 0


def _summary_line(m) -> str:
    return (
        f"events={m.events_committed} rollbacks={m.total_rollbacks} "
        f"gvt_rounds={m.gvt_rounds} final_gvt={m.final_gvt:.3f} "
        f"wall={m.wall_clock_seconds:.3f}s"
    )


def _cmd_oracle(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    result = run_sequential(cfg.phold)
    save_trace(args.out, result.trace)
    print(f"executed={result.events_executed} wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timewarp",
        description="Optimistic parallel discrete event simulation runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True, help="config file path")
    p_run.add_argument("--backend", choices=("inproc", "tcp"), default="inproc")
    p_run.add_argument("--out", help="CSV output path")
    p_run.add_argument("--node", help="run a single named node (TCP backend)")
    p_run.set_defaults(func=_cmd_run)

    p_oracle = sub.add_parser("oracle", help="write the sequential reference trace")
    p_oracle.add_argument("--config", required=True, help="config file path")
    p_oracle.add_argument("--out", required=True, help="trace file path")
    p_oracle.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
