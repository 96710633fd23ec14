"""Command-line entry points for running scenarios and sweeps.

`run` executes one named scenario under one protocol variant (the
replication-sweep and comparison scenarios fan out into their full run
sets) and writes runs.csv plus summary.txt to --out.  `sweep` reads a
TOML config describing a replication sweep.  Both exit 0 only if every
run's embedded assertions passed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .harness import (
    VARIANTS,
    emit_report,
    replication_sweep,
    run_compare,
    run_named,
)
from .scenarios import SCENARIO_NAMES

log = logging.getLogger(__name__)

_SWEEP_DEFAULTS = {
    "node_count": 75,
    "variant": "redirect-reliable",
    "f_values": [1, 2, 3, 5],
    "subs_per_node": [1, 3, 5],
    "seeds": list(range(1, 11)),
    "jobs": 1,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pubsubsim",
        description="Simulate content-based publish-subscribe protocols "
                    "over a structured overlay.",
    )
    parser.add_argument("--log-level", default="WARNING",
                        help="Python logging level (default: WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--scenario", required=True,
                     choices=sorted(SCENARIO_NAMES),
                     help="scenario name")
    run.add_argument("--variant", default="redirect-reliable",
                     choices=VARIANTS,
                     help="protocol variant; for fastdelivery-compare this "
                          "names the decentralized leg and the "
                          "publisher-centered leg always runs alongside")
    run.add_argument("--nodes", type=int, default=None,
                     help="network size (default: scenario's own)")
    run.add_argument("--seed", type=int, default=1, help="rng seed")
    run.add_argument("--f", type=int, default=2, dest="f",
                     help="replication factor")
    run.add_argument("--subs-per-node", type=int, default=1,
                     help="subscriptions issued per subscriber")
    run.add_argument("--drop-rate", type=float, default=0.0,
                     help="probability a message transmission is lost "
                          "(default: 0.0)")
    run.add_argument("--out", required=True, type=Path,
                     help="output directory for runs.csv and summary.txt")
    run.add_argument("--trace", action="store_true",
                     help="also write a per-run message trace (jsonl)")

    sweep = sub.add_parser("sweep", help="run a replication sweep from a config")
    sweep.add_argument("--config", required=True, type=Path,
                       help="TOML file; see configs/ for examples")
    return parser


def _trace_path(out_dir: Path, scenario: str, variant: str, seed: int):
    return out_dir / f"trace-{scenario}-{variant}-{seed}.jsonl"


def _cmd_run(args: argparse.Namespace) -> int:
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.drop_rate and args.scenario in ("replication-sweep",
                                            "fastdelivery-compare"):
        raise SystemExit("--drop-rate applies to single-run scenarios only")
    reports = []
    if args.scenario == "replication-sweep":
        f_values = _SWEEP_DEFAULTS["f_values"]
        subs_values = _SWEEP_DEFAULTS["subs_per_node"]
        log.info("replication sweep: f in %s, subs in %s, seed %d",
                 f_values, subs_values, args.seed)
        reports = replication_sweep(
            f_values=tuple(f_values), subs_values=tuple(subs_values),
            seeds=(args.seed,), node_count=args.nodes or 75,
            variant=args.variant if args.variant != "fastdelivery"
            else "redirect-reliable")
    elif args.scenario == "fastdelivery-compare":
        decentralized = (args.variant if args.variant != "fastdelivery"
                         else "redirect-reliable")
        trace_dir = out_dir if args.trace else None
        slow, fast = run_compare(
            seed=args.seed, node_count=args.nodes or 60, f=args.f,
            subs_per_node=args.subs_per_node,
            decentralized_variant=decentralized, trace_dir=trace_dir)
        reports = [slow, fast]
    else:
        trace = (_trace_path(out_dir, args.scenario, args.variant, args.seed)
                 if args.trace else None)
        reports = [run_named(args.scenario, args.variant, seed=args.seed,
                             node_count=args.nodes, f=args.f,
                             subs_per_node=args.subs_per_node,
                             drop_rate=args.drop_rate, trace_path=trace)]
    return _finish(reports, out_dir)


def _cmd_sweep(args: argparse.Namespace) -> int:
    raw = tomllib.loads(args.config.read_text())
    cfg = dict(_SWEEP_DEFAULTS)
    cfg.update(raw.get("sweep", {}))
    unknown = set(cfg) - set(_SWEEP_DEFAULTS) - {"out"}
    if unknown:
        raise SystemExit(f"unknown sweep config keys: {sorted(unknown)}")
    out_dir = Path(cfg.get("out", "sweep-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = replication_sweep(
        f_values=tuple(cfg["f_values"]),
        subs_values=tuple(cfg["subs_per_node"]),
        seeds=tuple(cfg["seeds"]),
        node_count=int(cfg["node_count"]),
        variant=str(cfg["variant"]),
        jobs=int(cfg["jobs"]))
    return _finish(reports, out_dir)


def _finish(reports, out_dir: Path) -> int:
    csv_path, summary_path = emit_report(reports, out_dir)
    failed = [r for r in reports if not r.ok]
    for rep in reports:
        status = "ok" if rep.ok else "FAILED"
        print(f"{rep.scenario} {rep.variant} seed={rep.seed} "
              f"f={rep.f} subs={rep.subs_per_node}: {status} "
              f"missing={rep.missing} duplicates={rep.duplicates} "
              f"mean_event_latency={rep.mean_event_latency_ms:.1f}ms")
    print(f"wrote {csv_path} and {summary_path}")
    if failed:
        for rep in failed:
            for failure in rep.assertion_failures:
                print(f"assertion failed [{rep.scenario}/{rep.variant}"
                      f"/seed {rep.seed}]: {failure}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_sweep(args)


if __name__ == "__main__":
    raise SystemExit(main())
