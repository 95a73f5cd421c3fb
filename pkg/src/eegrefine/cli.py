"""Command-line entry point: ``eegrefine <command> --config C --out DIR --seed N``.

Exit codes: 0 ok, 2 configuration, 3 data, 4 judge or network, 5 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .exceptions import ConfigError, DataError, EegRefineError, InvariantError, JudgeError
from .pipeline import (
    SOURCES,
    PipelineConfig,
    cmd_bench,
    cmd_build_graph,
    cmd_features,
    cmd_metrics,
    cmd_refine,
    cmd_synth,
)

log = logging.getLogger("eegrefine")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_JUDGE, EXIT_INVARIANT = 0, 2, 3, 4, 5


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field by dotted path (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegrefine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("synth", help="generate synthetic EEG with planted connectivity"))
    _common(sub.add_parser("features", help="per-channel statistics and descriptions"))
    p = sub.add_parser("build-graph", help="stage-one or baseline graphs, one JSON per window")
    _common(p)
    p.add_argument("--source", choices=SOURCES)
    p = sub.add_parser("refine", help="judge-driven edge refinement")
    _common(p)
    p.add_argument("--graphs", help="directory of initial graph JSON files")
    _common(sub.add_parser("bench", help="full benchmark over baselines and judges"))
    p = sub.add_parser("metrics", help="metrics for existing graph directories")
    _common(p)
    p.add_argument("--graphs", action="append", default=[], help="graph directory (repeatable)")
    return parser


def run(args: argparse.Namespace) -> None:
    cfg = PipelineConfig.load(args.config, args.set, args.seed)
    if args.command == "synth":
        man = cmd_synth(cfg, args.out)
    elif args.command == "features":
        man = cmd_features(cfg, args.out)
    elif args.command == "build-graph":
        man = cmd_build_graph(cfg, args.out, args.source)
    elif args.command == "refine":
        man = cmd_refine(cfg, args.out, args.graphs)
    elif args.command == "bench":
        res = cmd_bench(cfg, args.out)
        man = res.manifest
        for row in res.report.rows:
            log.info("%-12s sparsity=%.4f jsd=%.4f f1=%.4f%s", row.judge_id, row.mean_sparsity,
                     row.mean_jsd, row.f1, f"  ERROR {row.error}" if row.error else "")
    else:
        man = cmd_metrics(cfg, args.out, args.graphs)
    for w in man.warnings[:20]:
        log.warning(w)
    print(json.dumps({"command": args.command, "out": str(man.out_dir),
                      "inventory_hash": man.inventory_hash(), "files": len(man.files)}))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except JudgeError as exc:
        print(f"judge error: {exc}", file=sys.stderr)
        return EXIT_JUDGE
    except (InvariantError, EegRefineError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
