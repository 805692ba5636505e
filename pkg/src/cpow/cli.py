"""``cpow`` command line: run experiments, check golden vectors, compare reports."""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .chain import check_golden_vectors
from .errors import ConfigInvalid, InvariantViolation
from .experiments import (
    IoError,
    ScenarioSpec,
    compare,
    emit_report,
    iter_checks,
    parse_seeds,
    run_many,
)
from .simnet import ScenarioConfig

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = ScenarioConfig.load(args.scenario)
    spec = ScenarioSpec.from_config(cfg, args.mode, parse_seeds(args.seeds), args.blocks)
    metrics = run_many(spec, jobs=args.jobs)
    paths = emit_report(metrics, args.out)
    for m in metrics:
        means = ", ".join(f"{k}={v:.4f}" for k, v in sorted(m.reward_mean.items()))
        print(f"seed {m.seed}: {sum(m.blocks_won.values())} blocks, mean reward {means}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _cmd_verify_golden(args) -> int:
    failures = check_golden_vectors(args.vectors)
    for line, expected, actual in failures:
        print(f"line {line}: expected {expected} got {actual}")
    print("golden vectors: " + ("OK" if not failures else f"{len(failures)} mismatches"))
    return EXIT_OK if not failures else EXIT_FAIL


def _cmd_compare(args) -> int:
    checks = compare(args.baseline, args.candidate)
    for line in iter_checks(checks):
        print(line)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario over several seeds and write reports")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--mode", choices=["solo", "collab", "collaborative"], default="solo")
    p.add_argument("--blocks", type=int, default=None, help="override blocks_target")
    p.add_argument("--seeds", default="1..5", help="e.g. 1..5 or 1,3,9")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel simulations")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify-golden", help="recompute header digests from a vector file")
    p.add_argument("--vectors", required=True)
    p.set_defaults(func=_cmd_verify_golden)

    p = sub.add_parser("compare", help="check solo (baseline) vs collaborative (candidate) orderings")
    p.add_argument("--baseline", required=True)
    p.add_argument("--candidate", required=True)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigInvalid, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, IoError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
