"""Discrete-event network simulator.

Single-threaded event loop over a heap of ``(fire_at, seq)`` entries, so
runs are fully deterministic for a given seed and call order. Three event
classes exist:

* message deliveries - service-gated (see below), may fail
* node timers - fire exactly at their deadline, never queued behind work
* scripted actions - scenario callbacks, run unbuffered

Link model: one-way latency drawn uniformly from a per-region-pair band;
pairs are symmetric. A send may be dropped (``drop_rate``, sampled at
send time) or may find the target dead at delivery time. Both outcomes
surface as a failure notification back at the sender (``target_dead``
distinguishes them); in a deployment the sender would learn this through
timeout plus probing, which the notification stands in for. Drops never
imply a dead peer, so nodes only evict peers on ``target_dead`` failures.

Service model: each node processes one handler at a time. A delivery
arriving while the node is busy is requeued to the end of the busy
period. When a handler runs, its cost is ``base_proc_ms`` plus
``per_match_ms`` for every predicate match it performs, and every effect
it produces (sends, timer registrations, local deliveries) is stamped at
the completion instant. Under load this queues work and inflates
end-to-end latency, which is the point. Timer callbacks are not gated:
periodic maintenance stays periodic regardless of load.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, TYPE_CHECKING

from .metrics import Metrics

if TYPE_CHECKING:
    from .node import OverlayNode

log = logging.getLogger(__name__)

__all__ = ["SimConfig", "Simulator", "Timer"]


@dataclass(frozen=True)
class SimConfig:
    intra_latency: tuple[float, float] = (15.0, 45.0)
    inter_latency: tuple[float, float] = (45.0, 100.0)
    # optional per-pair override, keyed by sorted region-name pair
    latency_matrix: Optional[dict[tuple[str, str], tuple[float, float]]] = None
    drop_rate: float = 0.0
    base_proc_ms: float = 3.0
    per_match_ms: float = 0.15

    def __post_init__(self):
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("drop_rate must be in [0, 1)")

    def latency_bounds(self, region_a: str, region_b: str) -> tuple[float, float]:
        if self.latency_matrix is not None:
            pair = (region_a, region_b) if region_a <= region_b else (region_b, region_a)
            found = self.latency_matrix.get(pair)
            if found is not None:
                return found
        return self.intra_latency if region_a == region_b else self.inter_latency

    def max_latency(self) -> float:
        """Worst one-way latency any pair can draw; timeout budgets key off it."""
        worst = max(self.intra_latency[1], self.inter_latency[1])
        if self.latency_matrix:
            worst = max(worst, *(hi for _lo, hi in self.latency_matrix.values()))
        return worst


@dataclass
class Timer:
    fire_at: float
    callback: Callable[[], None]
    node_id: int
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class _Delivery:
    src: int
    dst: int
    message: object


@dataclass
class _Failure:
    """Send-failure notification bound for the original sender."""

    src: int  # failed destination
    dst: int  # original sender, who receives this
    message: object
    target_dead: bool


@dataclass
class _Scripted:
    callback: Callable[[], None]


@dataclass
class Simulator:
    config: SimConfig
    seed: int | str = 0
    metrics: Metrics = field(default_factory=Metrics)
    tracing: bool = False

    def __post_init__(self):
        self.rng = random.Random(str(self.seed))
        self.now: float = 0.0
        self.nodes: dict[int, "OverlayNode"] = {}
        self.alive: set[int] = set()
        self.trace_records: list[dict] = []
        self._queue: list[tuple[float, int, object]] = []
        self._seq = itertools.count()
        self._busy_until: dict[int, float] = {}
        # when a service-gated handler is executing, effects buffer here
        # and are released at the handler's completion instant
        self._effect_buffer: Optional[list] = None

    # -- registration -------------------------------------------------------

    def register(self, node: "OverlayNode") -> None:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        self.nodes[node.node_id] = node
        self.alive.add(node.node_id)
        self._busy_until[node.node_id] = 0.0

    def join(self, node: "OverlayNode") -> None:
        """Bring a freshly constructed node up mid-run.

        The joiner bootstraps from the current live membership; every live
        node is told about the joiner at the same instant, in id order.
        """
        if self.nodes.get(node.node_id) is not node:
            raise ValueError("join expects a node constructed on this simulator")
        node.on_late_join()
        members = [self.nodes[i].info for i in sorted(self.alive) if i != node.node_id]
        node.bootstrap(members)
        self._trace({"t": self.now, "type": "join", "node": node.node_id})
        for nid in sorted(self.alive):
            if nid != node.node_id:
                self.nodes[nid].on_peer_joined(node.info)

    def fail_node(self, node_id: int) -> None:
        self.alive.discard(node_id)
        self._trace({"t": self.now, "type": "node_dead", "node": node_id})

    def is_alive(self, node_id: int) -> bool:
        return node_id in self.alive

    # -- effects ------------------------------------------------------------

    def send(self, src: int, dst: int, message) -> None:
        if src == dst:
            raise ValueError("self-send")
        if self._effect_buffer is not None:
            self._effect_buffer.append(("send", src, dst, message))
            return
        self._send_now(src, dst, message)

    def _send_now(self, src: int, dst: int, message) -> None:
        self.metrics.count_message(message.kind)
        delay = self._sample_latency(src, dst)
        if self.config.drop_rate and self.rng.random() < self.config.drop_rate:
            self._trace({"t": self.now, "type": "drop", "src": src, "dst": dst,
                         "kind": message.kind, **message.trace_fields()})
            self._push(self.now + delay, _Failure(dst, src, message, False))
            return
        self._trace({"t": self.now, "type": "send", "src": src, "dst": dst,
                     "kind": message.kind, **message.trace_fields()})
        self._push(self.now + delay, _Delivery(src, dst, message))

    def set_timer(self, node_id: int, delay: float, callback: Callable[[], None]) -> Timer:
        if self._effect_buffer is not None:
            timer = Timer(-1.0, callback, node_id)
            self._effect_buffer.append(("timer", node_id, delay, timer))
            return timer
        timer = Timer(self.now + delay, callback, node_id)
        self._push(timer.fire_at, timer)
        return timer

    def schedule(self, at: float, callback: Callable[[], None]) -> None:
        """Queue a scripted scenario action at an absolute time."""
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} before now {self.now}")
        self._push(at, _Scripted(callback))

    def record_delivery(self, node_id: int, event_id: tuple[int, int],
                        publish_time: float, via: str) -> None:
        if self._effect_buffer is not None:
            self._effect_buffer.append(("deliver", node_id, event_id, publish_time, via))
            return
        self.metrics.record_delivery(node_id, event_id, publish_time, self.now, via)
        self._trace({"t": self.now, "type": "deliver", "node": node_id,
                     "event": list(event_id), "via": via})

    # -- loop ---------------------------------------------------------------

    def run_until(self, t_end: float) -> None:
        while self._queue and self._queue[0][0] <= t_end:
            fire_at, _, item = heapq.heappop(self._queue)
            self.now = fire_at
            self._dispatch(item)
        if self.now < t_end:
            self.now = t_end

    def run(self, max_time: float = float("inf")) -> None:
        self.run_until(max_time)
        if self._queue:
            log.debug("stopped at %s with %d events pending", self.now, len(self._queue))

    def _dispatch(self, item) -> None:
        if isinstance(item, Timer):
            if not item.cancelled and item.node_id in self.alive:
                self._trace({"t": self.now, "type": "timer", "node": item.node_id})
                item.callback()
            return
        if isinstance(item, _Scripted):
            item.callback()
            return
        if isinstance(item, _Delivery):
            if item.dst not in self.alive:
                # target died in flight; sender learns at delivery time
                self._push(self.now, _Failure(item.dst, item.src, item.message, True))
                return
            self._run_gated(item.dst, lambda node: node.handle(item.message, item.src),
                            {"type": "recv", "src": item.src, "dst": item.dst,
                             "kind": item.message.kind, **item.message.trace_fields()})
            return
        if isinstance(item, _Failure):
            if item.dst not in self.alive:
                return
            self._run_gated(
                item.dst,
                lambda node: node.on_send_failure(item.src, item.message, item.target_dead),
                {"type": "send_failed", "src": item.src, "dst": item.dst,
                 "kind": item.message.kind, "dead": item.target_dead})
            return
        if isinstance(item, _Requeue):
            if item.node_id in self.alive:
                self._run_gated(item.node_id, item.action, item.trace_fields)
            return
        raise TypeError(f"unknown event {item!r}")

    def _run_gated(self, node_id: int, action, trace_fields: dict) -> None:
        busy = self._busy_until.get(node_id, 0.0)
        if busy > self.now:
            # node mid-handler: park this work until it frees up
            self._push(busy, _Requeue(node_id, action, trace_fields))
            return
        self._execute(node_id, action, trace_fields)

    def _execute(self, node_id: int, action, trace_fields: dict) -> None:
        node = self.nodes[node_id]
        self._trace({"t": self.now, **trace_fields})
        ops_before = self.metrics.match_ops
        buffer: list = []
        self._effect_buffer = buffer
        try:
            action(node)
        finally:
            self._effect_buffer = None
        ops = self.metrics.match_ops - ops_before
        completion = self.now + self.config.base_proc_ms + self.config.per_match_ms * ops
        self._busy_until[node_id] = completion
        saved_now = self.now
        self.now = completion
        try:
            for effect in buffer:
                self._flush_effect(effect)
        finally:
            self.now = saved_now

    def _flush_effect(self, effect) -> None:
        tag = effect[0]
        if tag == "send":
            _, src, dst, message = effect
            self._send_now(src, dst, message)
        elif tag == "timer":
            _, node_id, delay, timer = effect
            timer.fire_at = self.now + delay
            self._push(timer.fire_at, timer)
        elif tag == "deliver":
            _, node_id, event_id, publish_time, via = effect
            self.record_delivery(node_id, event_id, publish_time, via)
        else:
            raise ValueError(f"unknown effect {tag}")

    # -- internals ----------------------------------------------------------

    def _push(self, fire_at: float, item) -> None:
        heapq.heappush(self._queue, (fire_at, next(self._seq), item))

    def _sample_latency(self, src: int, dst: int) -> float:
        lo, hi = self.config.latency_bounds(self.nodes[src].region,
                                            self.nodes[dst].region)
        return self.rng.uniform(lo, hi)

    def _trace(self, record: dict) -> None:
        if self.tracing:
            self.trace_records.append(record)


@dataclass
class _Requeue:
    """A gated handler waiting out another handler's service time."""

    node_id: int
    action: Callable
    trace_fields: dict
