"""Scenario harness: delivery oracle, embedded run assertions, report
emission, sweep aggregation, and protocol-comparison pairing."""
import dataclasses

import pytest

from pubsubsim.harness import (
    RunReport,
    _soundness_failures,
    aggregate_cells,
    emit_report,
    expected_deliveries,
    replication_sweep,
    run_compare,
    run_named,
    run_scenario,
)
from pubsubsim.metrics import Delivery
from pubsubsim.scenarios import (
    PublishStep,
    ScenarioScript,
    SubscribeStep,
    build,
)

NODE_IDS = (0x10, 0x20, 0x30, 0x40, 0x50, 0x60)


def make_script(subs, pubs, fails=(), settle=500.0):
    """Minimal hand-built script for oracle unit tests."""
    from pubsubsim.scenarios import FailStep

    script = ScenarioScript(
        name="oracle-probe", seed=0, width=16, bucket_k=8, f=1,
        refresh_interval=60_000.0,
        node_ids=NODE_IDS,
        regions={nid: "eu" for nid in NODE_IDS},
        publishers=tuple(sorted({p.node_id for p in pubs})),
        subscribers=tuple(sorted({s.node_id for s in subs})),
        publisher_topics={p.node_id: ("news",) for p in pubs},
        subscribe_steps=tuple(subs),
        publish_steps=tuple(pubs),
        fail_steps=tuple(fails),
        settle_ms=settle,
        run_until_ms=10_000.0,
        faulty=bool(fails),
    )
    script.validate()
    return script


class TestDeliveryOracle:
    def test_topic_and_range_matching(self):
        subs = (
            SubscribeStep(10.0, 0x10, "news/level[2,5]", 4),
            SubscribeStep(10.0, 0x20, "news", 4),
            SubscribeStep(10.0, 0x30, "sport", 4),
        )
        pubs = (
            PublishStep(2_000.0, 0x60, 0, "news/level[3,3]", "a"),
            PublishStep(2_100.0, 0x60, 1, "news/level[7,7]", "b"),
        )
        expected = expected_deliveries(make_script(subs, pubs))
        assert expected == {
            (0x10, (0x60, 0)),  # level 3 inside [2,5]
            (0x20, (0x60, 0)),  # plain topic follower gets both
            (0x20, (0x60, 1)),
        }

    def test_settle_cutoff_excludes_late_subscriptions(self):
        subs = (
            SubscribeStep(100.0, 0x10, "news", 4),   # 100+500 <= 700: owed
            SubscribeStep(300.0, 0x20, "news", 4),   # 300+500 > 700: gray zone
        )
        pubs = (PublishStep(700.0, 0x60, 0, "news/level[1,1]", "a"),)
        expected = expected_deliveries(make_script(subs, pubs, settle=500.0))
        assert expected == {(0x10, (0x60, 0))}

    def test_subscriber_failed_before_publish_not_owed(self):
        from pubsubsim.scenarios import FailStep

        subs = (
            SubscribeStep(10.0, 0x10, "news", 4),
            SubscribeStep(10.0, 0x20, "news", 4),
        )
        pubs = (PublishStep(2_000.0, 0x60, 0, "news/level[1,1]", "a"),)
        fails = (FailStep(1_500.0, 0x10),)
        expected = expected_deliveries(make_script(subs, pubs, fails))
        assert expected == {(0x20, (0x60, 0))}

    def test_soundness_flags_unjustified_delivery(self):
        subs = (SubscribeStep(10.0, 0x10, "news", 4),)
        pubs = (PublishStep(2_000.0, 0x60, 0, "sport/level[1,1]", "a"),)
        script = make_script(subs, pubs)
        bogus = [Delivery(0x10, (0x60, 0), 2_000.0, 2_050.0, "tree")]
        failures = _soundness_failures(script, bogus)
        assert failures and "spurious" in failures[0]

    def test_soundness_accepts_justified_delivery(self):
        # even one issued inside the settle gray zone: soundness has no cutoff
        subs = (SubscribeStep(1_999.0, 0x10, "news", 4),)
        pubs = (PublishStep(2_000.0, 0x60, 0, "news/level[1,1]", "a"),)
        script = make_script(subs, pubs)
        fine = [Delivery(0x10, (0x60, 0), 2_000.0, 2_050.0, "tree")]
        assert _soundness_failures(script, fine) == []


class TestRunScenario:
    def test_normal_run_is_clean(self):
        rep = run_named("normal", "redirect-reliable", seed=1, node_count=30)
        assert rep.ok and rep.missing == 0
        assert rep.distinct_deliveries == rep.expected_deliveries > 0
        assert rep.mean_event_latency_ms > 0
        assert rep.p95_event_latency_ms >= rep.p50_event_latency_ms
        assert rep.messages_total > rep.msgs_event > 0

    def test_reliable_run_completes_all_trackers(self):
        rep = run_named("normal", "base-reliable", seed=2, node_count=30)
        assert rep.ok
        assert rep.trackers_created == rep.trackers_completed > 0

    def test_fault_tolerated_report_on_lossy_variant(self):
        # losses under failures are permitted for the unreliable variant;
        # the run must still be sound and must not raise
        rep = run_named("fault", "base-unreliable", seed=1, node_count=30)
        assert rep.ok
        assert rep.missing >= 0

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            run_named("normal", "carrier-pigeon", seed=1, node_count=30)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError):
            build("rush-hour", 1)

    def test_trace_is_deterministic(self, tmp_path):
        paths = []
        for tag in ("a", "b"):
            p = tmp_path / f"trace-{tag}.jsonl"
            run_named("normal", "base-unreliable", seed=3, node_count=30,
                      trace_path=p)
            paths.append(p)
        blob = paths[0].read_bytes()
        assert blob == paths[1].read_bytes()
        import json

        lines = blob.decode().splitlines()
        assert lines, "trace must not be empty"
        types = {json.loads(line)["type"] for line in lines}
        assert {"send", "recv", "deliver"} <= types


class TestReports:
    def test_emit_report_shape_and_rerun_identity(self, tmp_path):
        reports = [run_named("normal", v, seed=4, node_count=30)
                   for v in ("base-unreliable", "redirect-reliable")]
        csv_path, summary_path = emit_report(reports, tmp_path / "one")
        text = csv_path.read_text()
        lines = text.splitlines()
        assert lines[0] == ",".join(RunReport.COLUMNS)
        assert len(lines) == 3
        assert summary_path.read_text().strip()

        again = [run_named("normal", v, seed=4, node_count=30)
                 for v in ("base-unreliable", "redirect-reliable")]
        csv2, _ = emit_report(again, tmp_path / "two")
        assert csv2.read_bytes() == csv_path.read_bytes()

    def test_emit_report_requires_reports(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], tmp_path)

    def test_aggregate_cells_means_and_counts(self):
        base = run_named("normal", "base-unreliable", seed=5, node_count=30)
        synth = [
            dataclasses.replace(base, f=1, subs_per_node=1,
                                mean_sub_latency_ms=100.0),
            dataclasses.replace(base, f=1, subs_per_node=1,
                                mean_sub_latency_ms=200.0),
            dataclasses.replace(base, f=3, subs_per_node=1,
                                mean_sub_latency_ms=400.0),
        ]
        cells = aggregate_cells(synth)
        assert set(cells) == {(1, 1), (3, 1)}
        assert cells[(1, 1)]["mean_sub_latency_ms"] == pytest.approx(150.0)
        assert cells[(1, 1)]["runs"] == 2
        assert cells[(3, 1)]["mean_sub_latency_ms"] == pytest.approx(400.0)


class TestSweepAndCompare:
    def test_sweep_covers_cross_product(self):
        reports = replication_sweep(f_values=(1, 2), subs_values=(1,),
                                    seeds=(1, 2), node_count=40)
        assert len(reports) == 4
        assert all(r.ok for r in reports)
        cells = aggregate_cells(reports)
        assert set(cells) == {(1, 1), (2, 1)}
        assert all(c["runs"] == 2 for c in cells.values())

    def test_sweep_rejects_empty_axes(self):
        with pytest.raises(ValueError):
            replication_sweep(f_values=(), subs_values=(1,), seeds=(1,))

    def test_compare_pairs_identical_populations(self):
        slow, fast = run_compare(seed=1)
        assert slow.ok and fast.ok
        assert slow.expected_deliveries == fast.expected_deliveries > 0
        assert slow.missing == 0 and fast.missing == 0
        assert fast.mean_event_latency_ms < slow.mean_event_latency_ms
