"""Scenario runner: wires a script into a simulated network, replays it
under one protocol variant, and reports correctness and cost metrics.

The expected-delivery oracle here is deliberately primitive: it walks the
scenario script and compares attribute sets by hand, sharing no matching
code with the protocol. A subscription counts toward an event only when
it was issued a full settle period before the publish; late subscriptions
(sub-burst) may still legally receive events, they just are not owed
them.

Reports serialize to a CSV with a fixed column order and to a
human-readable summary. Byte-identical re-runs are part of the contract:
nothing here may iterate an unordered container into an output file.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .fastdelivery import FastNode
from .overlay import OverlayConfig
from .predicate import Predicate, parse_predicate
from .rendezvous import ProtocolConfig
from .scenarios import ScenarioScript, build
from .simnet import SimConfig, Simulator

log = logging.getLogger(__name__)

__all__ = [
    "RunReport",
    "VARIANTS",
    "aggregate_cells",
    "emit_report",
    "expected_deliveries",
    "replication_sweep",
    "run_compare",
    "run_scenario",
]

VARIANTS = ("base-unreliable", "base-reliable", "redirect-unreliable",
            "redirect-reliable", "fastdelivery")

_MSG_COLUMNS = (
    ("msgs_event", ("event",)),
    ("msgs_event_ack", ("event_ack",)),
    ("msgs_subscribe", ("subscribe",)),
    ("msgs_subscribe_ack", ("subscribe_ack",)),
    ("msgs_backup_store", ("backup_store",)),
    ("msgs_backup_store_ack", ("backup_store_ack",)),
    ("msgs_track_replicate", ("track_replicate",)),
    ("msgs_shortcut", ("shortcut_offer", "shortcut_revoke")),
    ("msgs_fd", ("fd_subscribe", "fd_delegate", "fd_delegate_ack",
                 "fd_event", "advertise", "board_query", "board_reply")),
)


@dataclass(frozen=True)
class RunReport:
    scenario: str
    variant: str
    seed: int
    nodes: int
    f: int
    subs_per_node: int
    events_published: int
    expected_deliveries: int
    distinct_deliveries: int
    missing: int
    duplicates: int
    mean_event_latency_ms: float
    p50_event_latency_ms: float
    p95_event_latency_ms: float
    max_event_latency_ms: float
    mean_sub_latency_ms: float
    p95_sub_latency_ms: float
    messages_total: int
    msgs_event: int
    msgs_event_ack: int
    msgs_subscribe: int
    msgs_subscribe_ack: int
    msgs_backup_store: int
    msgs_backup_store_ack: int
    msgs_track_replicate: int
    msgs_shortcut: int
    msgs_fd: int
    msgs_other: int
    match_ops: int
    peak_entry_slots: int
    peak_node_slots: int
    entry_writes: int
    trackers_created: int
    trackers_completed: int
    publish_failures: int
    fd_misses: int
    assertion_failures: tuple[str, ...] = ()

    COLUMNS = (
        "scenario", "variant", "seed", "nodes", "f", "subs_per_node",
        "events_published", "expected_deliveries", "distinct_deliveries",
        "missing", "duplicates", "mean_event_latency_ms",
        "p50_event_latency_ms", "p95_event_latency_ms",
        "max_event_latency_ms", "mean_sub_latency_ms", "p95_sub_latency_ms",
        "messages_total", "msgs_event", "msgs_event_ack", "msgs_subscribe",
        "msgs_subscribe_ack", "msgs_backup_store", "msgs_backup_store_ack",
        "msgs_track_replicate", "msgs_shortcut", "msgs_fd", "msgs_other",
        "match_ops", "peak_entry_slots", "peak_node_slots", "entry_writes",
        "trackers_created", "trackers_completed", "publish_failures",
        "fd_misses", "assertions",
    )

    @property
    def ok(self) -> bool:
        return not self.assertion_failures

    def row(self) -> list[str]:
        cells = []
        for col in self.COLUMNS[:-1]:
            value = getattr(self, col)
            cells.append(f"{value:.3f}" if isinstance(value, float) else str(value))
        cells.append("ok" if self.ok else "|".join(self.assertion_failures))
        return cells


# -- oracle ------------------------------------------------------------------


def _oracle_parts(pred: Predicate):
    topics = frozenset(t.name for t in pred.topic_attrs)
    ranges = tuple(sorted((r.name, r.lo, r.hi) for r in pred.range_attrs))
    return topics, ranges


def _oracle_match(sub_parts, ev_parts) -> bool:
    """Hand-rolled attribute walk; the protocol's matcher is not consulted."""
    sub_topics, sub_ranges = sub_parts
    ev_topics, ev_ranges = ev_parts
    if not sub_topics <= ev_topics:
        return False
    ev_values: dict[str, Fraction] = {name: lo for name, lo, _hi in ev_ranges}
    for name, lo, hi in sub_ranges:
        value = ev_values.get(name)
        if value is None or value < lo or hi < value:
            return False
    return True


def expected_deliveries(script: ScenarioScript) -> set[tuple[int, tuple[int, int]]]:
    """Brute-force the (subscriber, event_id) pairs the run owes."""
    subs = [(step.node_id, step.at, _oracle_parts(parse_predicate(step.pred_text)))
            for step in script.subscribe_steps]
    failed_before = {step.node_id: step.at for step in script.fail_steps}
    expected: set[tuple[int, tuple[int, int]]] = set()
    for pub in script.publish_steps:
        ev_parts = _oracle_parts(parse_predicate(pub.pred_text))
        for node_id, issued_at, sub_parts in subs:
            if issued_at + script.settle_ms > pub.at:
                continue  # not yet owed: still settling when published
            if failed_before.get(node_id, float("inf")) <= pub.at:
                continue
            if _oracle_match(sub_parts, ev_parts):
                expected.add((node_id, (pub.node_id, pub.seq)))
    return expected


def _soundness_failures(script: ScenarioScript, deliveries) -> list[str]:
    """Every delivery must be justified by some subscription the receiver
    had already issued, no settle grace required."""
    subs_by_node: dict[int, list[tuple[float, tuple]]] = {}
    for step in script.subscribe_steps:
        subs_by_node.setdefault(step.node_id, []).append(
            (step.at, _oracle_parts(parse_predicate(step.pred_text))))
    ev_parts = {(p.node_id, p.seq): _oracle_parts(parse_predicate(p.pred_text))
                for p in script.publish_steps}
    failures = []
    for d in deliveries:
        parts = ev_parts.get(d.event_id)
        if parts is None:
            failures.append(f"delivery of unknown event {d.event_id}")
            continue
        justified = any(at <= d.deliver_time and _oracle_match(sub, parts)
                        for at, sub in subs_by_node.get(d.node_id, ()))
        if not justified:
            failures.append(
                f"spurious delivery of {d.event_id} at node {d.node_id}")
    return failures[:5]  # enough to diagnose, bounded for the report


# -- running -----------------------------------------------------------------


def _variant_flags(variant: str) -> tuple[bool, bool, bool]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    fast = variant == "fastdelivery"
    redirect = variant.startswith("redirect")
    reliable = variant.endswith("-reliable")
    return fast, redirect, reliable


def build_network(script: ScenarioScript, variant: str,
                  drop_rate: float = 0.0, tracing: bool = False):
    _fast, redirect, reliable = _variant_flags(variant)
    sim_config = SimConfig(drop_rate=drop_rate)
    max_one_way = sim_config.max_latency()
    proto = ProtocolConfig(
        reliable=reliable, redirect=redirect, f_backups=script.f,
        ack_timeout=4.0 * max_one_way,
        refresh_interval=script.refresh_interval, key_width=script.width)
    overlay = OverlayConfig(width=script.width, k=script.bucket_k)
    sim = Simulator(sim_config, seed=f"{script.name}#{script.seed}",
                    tracing=tracing)
    nodes = {nid: FastNode(sim, nid, script.regions[nid], proto, overlay)
             for nid in script.node_ids}
    infos = [n.info for n in nodes.values()]
    for node in nodes.values():
        node.bootstrap(infos)
    return sim, nodes


def _schedule_script(sim: Simulator, nodes, script: ScenarioScript,
                     variant: str) -> None:
    fast, _redirect, _reliable = _variant_flags(variant)
    for nid in script.node_ids:
        sim.schedule(0.0, nodes[nid].start)
    if fast:
        group_pred = parse_predicate(script.group_pred_text)
        for pid in script.publishers:
            sim.schedule(0.0, lambda p=pid: nodes[p].create_group(group_pred))
        for step in script.subscribe_steps:
            pred = parse_predicate(step.pred_text)
            topic = pred.topic_attrs[0].name
            targets = [pid for pid in script.publishers
                       if topic in script.publisher_topics[pid]]
            for pid in targets:
                sim.schedule(step.at,
                             lambda n=step.node_id, p=pid, pr=pred,
                             c=step.capacity:
                             nodes[n].fd_join(p, group_pred, pr, c))
        for step in script.publish_steps:
            sim.schedule(step.at,
                         lambda n=step.node_id, pr=parse_predicate(step.pred_text),
                         pl=step.payload: nodes[n].publish_fast(pr, pl))
    else:
        for step in script.subscribe_steps:
            sim.schedule(step.at,
                         lambda n=step.node_id,
                         pr=parse_predicate(step.pred_text):
                         nodes[n].subscribe(pr))
        for step in script.publish_steps:
            sim.schedule(step.at,
                         lambda n=step.node_id, pr=parse_predicate(step.pred_text),
                         pl=step.payload: nodes[n].publish(pr, pl))
    for step in script.fail_steps:
        sim.schedule(step.at, lambda n=step.node_id: sim.fail_node(n))


def _quantile(sorted_values: list[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    pos = q * (len(sorted_values) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def run_scenario(script: ScenarioScript, variant: str,
                 drop_rate: float = 0.0, tracing: bool = False,
                 trace_path: Optional[Path] = None) -> RunReport:
    script.validate()
    _fast, _redirect, reliable = _variant_flags(variant)
    sim, nodes = build_network(script, variant, drop_rate,
                               tracing or trace_path is not None)
    _schedule_script(sim, nodes, script, variant)
    sim.run_until(script.run_until_ms)

    metrics = sim.metrics
    expected = expected_deliveries(script)
    delivered = metrics.delivered_pairs()
    missing = len(expected - delivered)

    first_delivery: dict[tuple[int, tuple[int, int]], float] = {}
    for d in metrics.deliveries:
        key = (d.node_id, d.event_id)
        if key not in first_delivery or d.latency < first_delivery[key]:
            first_delivery[key] = d.latency
    latencies = sorted(first_delivery.values())
    sub_latencies = sorted(metrics.sub_latencies)

    failures = _soundness_failures(script, metrics.deliveries)
    expect_zero = (not script.faulty) or (reliable and variant != "fastdelivery")
    if expect_zero and missing:
        failures.append(f"missing {missing} of {len(expected)} deliveries")
    if reliable and not script.fail_steps and drop_rate == 0.0 \
            and metrics.trackers_completed != metrics.trackers_created:
        failures.append(
            f"trackers incomplete: {metrics.trackers_completed}"
            f"/{metrics.trackers_created}")

    counted = metrics.messages
    msg_cells = {col: sum(counted.get(kind, 0) for kind in kinds)
                 for col, kinds in _MSG_COLUMNS}
    msgs_other = metrics.total_messages() - sum(msg_cells.values())

    if trace_path is not None:
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with open(trace_path, "w") as fh:
            for record in sim.trace_records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    subs_per_node = (len(script.subscribe_steps) // len(script.subscribers)
                     if script.subscribers else 0)
    return RunReport(
        scenario=script.name, variant=variant, seed=script.seed,
        nodes=len(script.node_ids), f=script.f, subs_per_node=subs_per_node,
        events_published=len(script.publish_steps),
        expected_deliveries=len(expected),
        distinct_deliveries=len(delivered), missing=missing,
        duplicates=metrics.duplicate_count(),
        mean_event_latency_ms=_mean(latencies),
        p50_event_latency_ms=_quantile(latencies, 0.50),
        p95_event_latency_ms=_quantile(latencies, 0.95),
        max_event_latency_ms=latencies[-1] if latencies else 0.0,
        mean_sub_latency_ms=_mean(sub_latencies),
        p95_sub_latency_ms=_quantile(sub_latencies, 0.95),
        messages_total=metrics.total_messages(),
        msgs_other=msgs_other, match_ops=metrics.match_ops,
        peak_entry_slots=metrics.peak_entry_slots,
        peak_node_slots=metrics.peak_node_slots,
        entry_writes=metrics.entry_writes,
        trackers_created=metrics.trackers_created,
        trackers_completed=metrics.trackers_completed,
        publish_failures=metrics.publish_failures,
        fd_misses=metrics.fd_misses,
        assertion_failures=tuple(failures),
        **msg_cells,
    )


def run_named(name: str, variant: str, seed: int, node_count: Optional[int] = None,
              f: int = 2, subs_per_node: int = 1, drop_rate: float = 0.0,
              trace_path: Optional[Path] = None) -> RunReport:
    script = build(name, seed, node_count=node_count, f=f,
                   subs_per_node=subs_per_node)
    return run_scenario(script, variant, drop_rate=drop_rate,
                        trace_path=trace_path)


def run_compare(seed: int, node_count: int = 60, f: int = 2,
                subs_per_node: int = 1,
                decentralized_variant: str = "redirect-reliable",
                trace_dir: Optional[Path] = None) -> tuple[RunReport, RunReport]:
    """Run the comparison script under both protocols, same script."""
    script = build("fastdelivery-compare", seed, node_count=node_count,
                   f=f, subs_per_node=subs_per_node)
    paths = (None, None)
    if trace_dir is not None:
        paths = (trace_dir / f"trace-compare-{decentralized_variant}-{seed}.jsonl",
                 trace_dir / f"trace-compare-fastdelivery-{seed}.jsonl")
    slow = run_scenario(script, decentralized_variant, trace_path=paths[0])
    fast = run_scenario(script, "fastdelivery", trace_path=paths[1])
    return slow, fast


# -- replication sweep ---------------------------------------------------------


def _sweep_cell(args) -> RunReport:
    f, subs, seed, node_count, variant = args
    script = build("normal", seed, node_count=node_count, f=f,
                   subs_per_node=subs)
    return run_scenario(script, variant)


def replication_sweep(f_values=(1, 2, 3, 5), subs_values=(1, 3, 5),
                      seeds=tuple(range(1, 11)), node_count: int = 75,
                      variant: str = "redirect-reliable",
                      jobs: int = 1) -> list[RunReport]:
    if not f_values or not subs_values or not seeds:
        raise ValueError("sweep value lists must be nonempty")
    cells = [(f, subs, seed, node_count, variant)
             for f in f_values for subs in subs_values for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(cell) for cell in cells]


def aggregate_cells(reports) -> dict[tuple[int, int], dict[str, float]]:
    """Mean metrics per (f, subs_per_node) cell, with the seed count."""
    cells: dict[tuple[int, int], list[RunReport]] = {}
    for rep in reports:
        cells.setdefault((rep.f, rep.subs_per_node), []).append(rep)
    out = {}
    for key in sorted(cells):
        group = cells[key]
        out[key] = {
            "runs": float(len(group)),
            "mean_sub_latency_ms": _mean(r.mean_sub_latency_ms for r in group),
            "mean_event_latency_ms": _mean(r.mean_event_latency_ms for r in group),
            "mean_peak_entry_slots": _mean(r.peak_entry_slots for r in group),
            "mean_missing": _mean(r.missing for r in group),
        }
    return out


# -- reporting -----------------------------------------------------------------


def emit_report(reports, out_dir: Path) -> tuple[Path, Path]:
    """Write runs.csv and summary.txt; returns both paths."""
    if not reports:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(reports, key=lambda r: (r.scenario, r.variant, r.f,
                                             r.subs_per_node, r.seed))
    csv_path = out_dir / "runs.csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RunReport.COLUMNS)
    for rep in ordered:
        writer.writerow(rep.row())
    csv_path.write_text(buf.getvalue())

    lines = [f"{'scenario':<22} {'variant':<20} {'seed':>4} {'f':>2} "
             f"{'miss':>5} {'dup':>5} {'lat ms':>9} {'sub ms':>9} "
             f"{'msgs':>8}  status"]
    for rep in ordered:
        lines.append(
            f"{rep.scenario:<22} {rep.variant:<20} {rep.seed:>4} {rep.f:>2} "
            f"{rep.missing:>5} {rep.duplicates:>5} "
            f"{rep.mean_event_latency_ms:>9.2f} "
            f"{rep.mean_sub_latency_ms:>9.2f} {rep.messages_total:>8}  "
            f"{'ok' if rep.ok else ';'.join(rep.assertion_failures)}")
    summary_path = out_dir / "summary.txt"
    summary_path.write_text("\n".join(lines) + "\n")
    return csv_path, summary_path
