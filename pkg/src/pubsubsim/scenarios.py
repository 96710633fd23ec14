"""Scenario scripts: pure data describing who subscribes, publishes, and
fails, and when.

A script is deliberately free of any simulator or protocol state so the
harness can replay the same script under every variant and the oracle can
brute-force the expected deliveries from the script alone. All randomness
is drawn up front from the scenario seed; replaying a script is exact.

Timeline shape shared by all scripts::

    subscribe phase | settle | publish phase | drain

``settle`` is three times the worst one-way link latency times a routing
diameter estimate, long enough for every subscription issued in the
subscribe phase to be installed and replicated before the first event.
The sub-burst script breaks the rule on purpose: half its subscriptions
land inside the publish window, and the oracle only counts a subscription
toward an event when ``issue_time + settle <= publish_time``.
"""
from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from typing import Optional

from .simnet import SimConfig

__all__ = [
    "SCENARIO_NAMES",
    "FailStep",
    "PublishStep",
    "ScenarioScript",
    "SubscribeStep",
    "build",
]

TOPICS = ("news", "sport", "tech", "music", "art", "science")
RANGE_ATTR = "level"
RANGE_LO, RANGE_HI = 0, 10
GROUP_PRED_TEXT = f"{RANGE_ATTR}[{RANGE_LO},{RANGE_HI}]"
REGIONS = ("eu", "us", "asia", "sa")

SCENARIO_NAMES = ("normal", "sub-burst", "event-burst", "fault",
                  "fastdelivery-compare")

# worst one-way latency under the default link model; scripts time their
# settle and drain periods off this so they stay valid if defaults move
_DEFAULT_MAX_ONE_WAY = SimConfig().max_latency()


@dataclass(frozen=True)
class SubscribeStep:
    at: float
    node_id: int
    pred_text: str
    capacity: int  # used only by the publisher-centered variant


@dataclass(frozen=True)
class PublishStep:
    at: float
    node_id: int
    seq: int  # per-publisher, in time order; event_id == (node_id, seq)
    pred_text: str
    payload: str


@dataclass(frozen=True)
class FailStep:
    at: float
    node_id: int


@dataclass
class ScenarioScript:
    name: str
    seed: int
    width: int
    bucket_k: int
    f: int
    refresh_interval: float
    node_ids: tuple[int, ...]
    regions: dict[int, str]
    publishers: tuple[int, ...]
    subscribers: tuple[int, ...]
    publisher_topics: dict[int, tuple[str, ...]]
    subscribe_steps: tuple[SubscribeStep, ...]
    publish_steps: tuple[PublishStep, ...]
    fail_steps: tuple[FailStep, ...] = ()
    settle_ms: float = 0.0
    run_until_ms: float = 0.0
    group_pred_text: str = GROUP_PRED_TEXT
    faulty: bool = False  # drops the missing=0 expectation for lossy variants

    def validate(self) -> None:
        ids = set(self.node_ids)
        if len(ids) != len(self.node_ids):
            raise ValueError("duplicate node ids")
        for step in self.subscribe_steps:
            if step.node_id not in ids:
                raise ValueError(f"subscriber {step.node_id} not in network")
        for step in self.publish_steps:
            if step.node_id not in ids:
                raise ValueError(f"publisher {step.node_id} not in network")
        for step in self.fail_steps:
            if step.node_id not in ids:
                raise ValueError(f"failing node {step.node_id} not in network")
        if any(n <= 0 for n in (self.width, self.bucket_k)) or self.f < 0:
            raise ValueError("width and bucket_k must be positive, f >= 0")


def settle_time(node_count: int, max_one_way: float = _DEFAULT_MAX_ONE_WAY) -> float:
    diameter = max(1, math.ceil(math.log2(max(2, node_count))))
    return 3.0 * max_one_way * diameter


def _sub_pred(rng: random.Random, topics: tuple[str, ...]) -> str:
    topic = rng.choice(topics)
    if rng.random() < 0.5:
        return topic
    lo = rng.randint(RANGE_LO, RANGE_HI - 2)
    hi = min(RANGE_HI, lo + rng.randint(1, 4))
    return f"{topic}/{RANGE_ATTR}[{lo},{hi}]"


def _refine_sub(rng: random.Random, topic: str,
                span: Optional[tuple[int, int]]) -> tuple[str, Optional[tuple[int, int]]]:
    """Draw a follow-up subscription that refines an earlier one.

    A subscriber's later subscriptions stay on their first topic and
    overlap the running range span, so filter tables can coalesce one
    subscriber's interests instead of storing them side by side.
    """
    if span is None:
        # the bare-topic subscription already covers any ranged one
        lo = rng.randint(RANGE_LO, RANGE_HI - 1)
        hi = rng.randint(lo, RANGE_HI)
        return f"{topic}/{RANGE_ATTR}[{lo},{hi}]", None
    lo = rng.randint(span[0], span[1])  # starts inside the span: overlaps
    hi = rng.randint(lo, RANGE_HI)
    return f"{topic}/{RANGE_ATTR}[{lo},{hi}]", (span[0], max(span[1], hi))


_SUB_TEXT_RE = re.compile(
    rf"^(?P<topic>\w+)(?:/{RANGE_ATTR}\[(?P<lo>\d+),(?P<hi>\d+)\])?$")


def _sub_anchor(pred_text: str) -> tuple[str, Optional[tuple[int, int]]]:
    m = _SUB_TEXT_RE.match(pred_text)
    if m is None:  # pragma: no cover - generator and regex move together
        raise ValueError(f"unrecognized subscription text {pred_text!r}")
    if m.group("lo") is None:
        return m.group("topic"), None
    return m.group("topic"), (int(m.group("lo")), int(m.group("hi")))


def _event_pred(rng: random.Random, topics: tuple[str, ...]) -> str:
    topic = rng.choice(topics)
    value = rng.randint(RANGE_LO, RANGE_HI)
    return f"{topic}/{RANGE_ATTR}[{value},{value}]"


def _layout(rng: random.Random, node_count: int, width: int,
            publisher_count: int, subscriber_count: int):
    ids = tuple(sorted(rng.sample(range(1, 2 ** width), node_count)))
    regions = {nid: REGIONS[i % len(REGIONS)] for i, nid in enumerate(ids)}
    shuffled = list(ids)
    rng.shuffle(shuffled)
    publishers = tuple(sorted(shuffled[:publisher_count]))
    subscribers = tuple(sorted(
        shuffled[publisher_count:publisher_count + subscriber_count]))
    return ids, regions, publishers, subscribers


def build(name: str, seed: int, node_count: int | None = None,
          f: int = 2, subs_per_node: int = 1) -> ScenarioScript:
    """Construct the named scenario script for one seed."""
    name = name.replace("_", "-")
    if name == "normal":
        return _flow_script("normal", seed, node_count or 60, f, subs_per_node)
    if name == "sub-burst":
        return _flow_script("sub-burst", seed, node_count or 60, f,
                            subs_per_node, burst_subs=True)
    if name == "event-burst":
        return _flow_script("event-burst", seed, node_count or 60, f,
                            subs_per_node, rate_multiplier=10)
    if name == "fault":
        return _flow_script("fault", seed, node_count or 60, f,
                            subs_per_node, failures=2)
    if name == "fastdelivery-compare":
        return _compare_script(seed, node_count or 60, f, subs_per_node)
    raise ValueError(f"unknown scenario {name!r}")


def _flow_script(name: str, seed: int, node_count: int, f: int,
                 subs_per_node: int, rate_multiplier: int = 1,
                 burst_subs: bool = False, failures: int = 0,
                 width: int = 16, bucket_k: int = 8,
                 publisher_count: int = 4,
                 subscriber_fraction: float = 0.6,
                 events_per_publisher: int = 6,
                 spacing_ms: float = 150.0) -> ScenarioScript:
    # one rng stream per (seed, shape), shared across scenario names: the
    # same seed gives normal/sub-burst/event-burst/fault identical layouts
    # and subscription populations, so cross-scenario latency comparisons
    # hold everything but the scenario's own twist fixed
    rng = random.Random(f"scenario-flow-{seed}-{node_count}-{f}-{subs_per_node}")
    subscriber_count = int(node_count * subscriber_fraction)
    ids, regions, publishers, subscribers = _layout(
        rng, node_count, width, publisher_count, subscriber_count)
    # subscription completion slows with the replication factor (each hop
    # replicates synchronously before forwarding), so the quiet period
    # before publishing scales with f to start every cell in steady state
    settle = settle_time(node_count) * (1.0 + 0.25 * (f - 1))

    sub_phase = 400.0
    publish_start = sub_phase + settle
    publish_end = publish_start + events_per_publisher * spacing_ms

    subs: list[SubscribeStep] = []
    for nid in subscribers:
        capacity = rng.randint(2, 9)
        topic: str = ""
        span: Optional[tuple[int, int]] = None
        for k in range(subs_per_node):
            # the coin and the time are drawn unconditionally to keep the
            # rng stream aligned across scenario names
            late = rng.random() < 0.5
            at = (rng.uniform(publish_start, publish_end)
                  if burst_subs and late else rng.uniform(0.0, sub_phase))
            if k == 0:
                pred_text = _sub_pred(rng, TOPICS)
                topic, span = _sub_anchor(pred_text)
            else:
                pred_text, span = _refine_sub(rng, topic, span)
            subs.append(SubscribeStep(round(at, 3), nid, pred_text, capacity))

    # base events are drawn before any burst extras so that every scenario
    # in the seed family publishes the same base events at the same times;
    # a rate multiplier adds interleaved load on top of them, never instead
    # of them, which keeps burst-vs-normal latency a like-for-like pairing
    pubs: list[PublishStep] = []
    for pid in publishers:
        for i in range(events_per_publisher):
            at = publish_start + i * spacing_ms + rng.uniform(0, spacing_ms / 3)
            pubs.append(PublishStep(round(at, 3), pid, i,
                                    _event_pred(rng, TOPICS), f"{pid}-{i}"))
    if rate_multiplier > 1:
        slot_spacing = spacing_ms / rate_multiplier
        for pid in publishers:
            seq = events_per_publisher
            for slot in range(events_per_publisher * rate_multiplier):
                if slot % rate_multiplier == 0:
                    continue  # base event already occupies this slot
                at = (publish_start + slot * slot_spacing
                      + rng.uniform(0, slot_spacing / 3))
                pubs.append(PublishStep(round(at, 3), pid, seq,
                                        _event_pred(rng, TOPICS), f"{pid}-{seq}"))
                seq += 1

    fails: list[FailStep] = []
    if failures:
        relays = [nid for nid in ids
                  if nid not in publishers and nid not in subscribers]
        picked: list[int] = []
        for nid in rng.sample(relays, len(relays)):
            if all(abs(nid - other) > 1 for other in picked):
                picked.append(nid)
            if len(picked) == failures:
                break
        window = publish_end - publish_start
        for i, nid in enumerate(sorted(picked)):
            at = publish_start + window * (0.3 + 0.2 * i)
            fails.append(FailStep(round(at, 3), nid))

    # publishers number their events in publish order, so once the steps are
    # sorted by time the script's seq must follow that order per publisher
    # for the oracle to name the same event ids the run will produce
    ordered_pubs: list[PublishStep] = []
    next_seq: dict[int, int] = {}
    for p in sorted(pubs, key=lambda p: (p.at, p.node_id)):
        seq = next_seq.get(p.node_id, 0)
        next_seq[p.node_id] = seq + 1
        ordered_pubs.append(PublishStep(p.at, p.node_id, seq, p.pred_text,
                                        f"{p.node_id}-{seq}"))

    script = ScenarioScript(
        name=name, seed=seed, width=width, bucket_k=bucket_k, f=f,
        refresh_interval=60_000.0, node_ids=ids, regions=regions,
        publishers=publishers, subscribers=subscribers,
        publisher_topics={pid: TOPICS for pid in publishers},
        subscribe_steps=tuple(sorted(subs, key=lambda s: (s.at, s.node_id))),
        publish_steps=tuple(ordered_pubs),
        fail_steps=tuple(fails),
        settle_ms=settle,
        run_until_ms=publish_end + 2 * settle + 4_000.0,
        faulty=bool(failures),
    )
    script.validate()
    return script


def _compare_script(seed: int, node_count: int, f: int,
                    subs_per_node: int) -> ScenarioScript:
    """Latency-comparison script: publishers own disjoint topic alphabets
    and each subscriber follows exactly one publisher, so the decentralized
    and publisher-centered runs share one expected-delivery set."""
    rng = random.Random(f"scenario-compare-{seed}")
    width, bucket_k = 16, 8
    publisher_count = 3
    subscriber_count = int(node_count * 0.6)
    ids, regions, publishers, subscribers = _layout(
        rng, node_count, width, publisher_count, subscriber_count)
    alphabets = {publishers[0]: TOPICS[0:2], publishers[1]: TOPICS[2:4],
                 publishers[2]: TOPICS[4:6]}
    settle = settle_time(node_count) * (1.0 + 0.25 * (f - 1))
    sub_phase = 400.0
    publish_start = sub_phase + settle
    events, spacing = 8, 150.0

    subs: list[SubscribeStep] = []
    for i, nid in enumerate(subscribers):
        owner = publishers[i % publisher_count]
        capacity = rng.randint(2, 9)
        for _ in range(subs_per_node):
            subs.append(SubscribeStep(round(rng.uniform(0.0, sub_phase), 3),
                                      nid, _sub_pred(rng, alphabets[owner]),
                                      capacity))

    pubs: list[PublishStep] = []
    for pid in publishers:
        for i in range(events):
            at = publish_start + i * spacing + rng.uniform(0, spacing / 3)
            pubs.append(PublishStep(round(at, 3), pid, i,
                                    _event_pred(rng, alphabets[pid]),
                                    f"{pid}-{i}"))

    script = ScenarioScript(
        name="fastdelivery-compare", seed=seed, width=width,
        bucket_k=bucket_k, f=f, refresh_interval=60_000.0, node_ids=ids,
        regions=regions, publishers=publishers, subscribers=subscribers,
        publisher_topics=alphabets,
        subscribe_steps=tuple(sorted(subs, key=lambda s: (s.at, s.node_id))),
        publish_steps=tuple(sorted(pubs, key=lambda p: (p.at, p.node_id))),
        settle_ms=settle,
        run_until_ms=publish_start + events * spacing + 2 * settle + 4_000.0,
    )
    script.validate()
    return script
