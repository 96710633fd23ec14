"""Base class for simulated nodes that sit on the overlay."""
from __future__ import annotations

import logging
from typing import Optional

from .metrics import Metrics
from .overlay import OverlayConfig, PeerInfo, RoutingTable, route_next_hop, xor_distance
from .simnet import Simulator, Timer

log = logging.getLogger(__name__)

__all__ = ["OverlayNode"]


class OverlayNode:
    """A node with an id, a region, a routing table and a peer memory.

    ``known`` remembers every peer this node has ever heard of, even ones
    that no longer fit a routing bucket; it feeds bucket refills after a
    peer is declared dead, so routing keeps converging as the live set
    shrinks. ``believed_dead`` is this node's local view only.
    """

    def __init__(self, sim: Simulator, node_id: int, region: str,
                 overlay_config: Optional[OverlayConfig] = None):
        self.sim = sim
        self.node_id = node_id
        self.region = region
        self.table = RoutingTable(node_id, overlay_config or OverlayConfig())
        self.known: dict[int, PeerInfo] = {}
        self.believed_dead: set[int] = set()
        sim.register(self)

    # -- identity -----------------------------------------------------------

    @property
    def info(self) -> PeerInfo:
        return PeerInfo(self.node_id, self.node_id, self.region)

    @property
    def now(self) -> float:
        return self.sim.now

    @property
    def metrics(self) -> Metrics:
        return self.sim.metrics

    def __repr__(self):
        return f"<{type(self).__name__} {self.node_id:#x} {self.region}>"

    # -- membership ---------------------------------------------------------

    def bootstrap(self, members: list[PeerInfo]) -> None:
        for peer in sorted(members, key=lambda p: p.node_id):
            self.learn(peer)

    def learn(self, peer: PeerInfo) -> None:
        if peer.node_id == self.node_id or peer.node_id in self.believed_dead:
            return
        self.known.setdefault(peer.node_id, peer)
        self.table.insert(peer)

    def on_peer_joined(self, peer: PeerInfo) -> None:
        self.learn(peer)

    def on_late_join(self) -> None:
        """Called when this node enters an already-running network."""

    def mark_dead(self, peer_id: int) -> None:
        if peer_id in self.believed_dead:
            return
        self.believed_dead.add(peer_id)
        self.table.remove(peer_id)
        # refill the freed bucket space from remembered peers
        for pid in sorted(self.known):
            if pid not in self.believed_dead and pid not in self.table:
                self.table.insert(self.known[pid])

    def peer_info(self, peer_id: int) -> Optional[PeerInfo]:
        if peer_id == self.node_id:
            return self.info
        return self.known.get(peer_id)

    # -- routing ------------------------------------------------------------

    def route_toward(self, key: int) -> Optional[PeerInfo]:
        """Next hop strictly closer to ``key``, or None if this node is it."""
        return route_next_hop(self.node_id, self.table, key)

    def closest_peers(self, key: int, n: int,
                      exclude: frozenset[int] = frozenset()) -> list[PeerInfo]:
        """The n remembered live peers closest to ``key`` (never self)."""
        candidates = [p for pid, p in self.known.items()
                      if pid not in self.believed_dead and pid not in exclude]
        candidates.sort(key=lambda p: (xor_distance(p.node_id, key), p.node_id))
        return candidates[:n]

    # -- effects ------------------------------------------------------------

    def send(self, dst: int, message) -> None:
        self.sim.send(self.node_id, dst, message)

    def set_timer(self, delay: float, callback) -> Timer:
        return self.sim.set_timer(self.node_id, delay, callback)

    # -- dispatch -----------------------------------------------------------

    def handle(self, message, sender: int) -> None:
        handler = getattr(self, "on_" + message.kind, None)
        if handler is None:
            log.warning("%r has no handler for %s", self, message.kind)
            return
        handler(message, sender)

    def on_send_failure(self, dst: int, message, target_dead: bool) -> None:
        if target_dead:
            self.mark_dead(dst)
