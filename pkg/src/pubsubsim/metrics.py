"""Run-wide counters and gauges collected during a simulation.

One ``Metrics`` instance is shared by the simulator and every node.
Nothing here affects protocol behavior; the simulator reads only
``match_ops`` deltas to charge per-node service time.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

__all__ = ["Delivery", "Metrics"]


@dataclass(frozen=True)
class Delivery:
    node_id: int
    event_id: tuple[int, int]
    publish_time: float
    deliver_time: float
    via: str  # "tree" | "direct" | "helper"

    @property
    def latency(self) -> float:
        return self.deliver_time - self.publish_time


@dataclass
class Metrics:
    messages: Counter = field(default_factory=Counter)  # by message kind
    deliveries: list[Delivery] = field(default_factory=list)
    sub_latencies: list[float] = field(default_factory=list)
    match_ops: int = 0  # predicate-match evaluations, the CPU proxy
    publish_failures: int = 0  # publisher retries exhausted
    trackers_created: int = 0
    trackers_completed: int = 0
    # filter-table slot gauge, the memory proxy: per-node current counts
    # (main + secondary + backup copies) and the network-wide peak
    entry_slots: dict[int, int] = field(default_factory=dict)
    peak_entry_slots: int = 0  # network-wide peak of the slot total
    peak_node_slots: int = 0  # largest count any single node ever held
    entry_writes: int = 0  # cumulative filter stores, pairs with the peaks
    fd_misses: int = 0  # dead direct subscribers at publish time

    def count_message(self, kind: str) -> None:
        self.messages[kind] += 1

    def record_delivery(self, node_id: int, event_id: tuple[int, int],
                        publish_time: float, deliver_time: float,
                        via: str) -> None:
        self.deliveries.append(
            Delivery(node_id, event_id, publish_time, deliver_time, via))

    def record_sub_latency(self, latency: float) -> None:
        self.sub_latencies.append(latency)

    def update_entry_slots(self, node_id: int, slots: int) -> None:
        self.entry_slots[node_id] = slots
        total = sum(self.entry_slots.values())
        if total > self.peak_entry_slots:
            self.peak_entry_slots = total
        if slots > self.peak_node_slots:
            self.peak_node_slots = slots

    def delivered_pairs(self) -> set[tuple[int, tuple[int, int]]]:
        """Distinct (subscriber, event) pairs that were delivered."""
        return {(d.node_id, d.event_id) for d in self.deliveries}

    def duplicate_count(self) -> int:
        return len(self.deliveries) - len(self.delivered_pairs())

    def total_messages(self) -> int:
        return sum(self.messages.values())
