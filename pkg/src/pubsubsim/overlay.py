"""Overlay id space and routing.

Nodes and attribute keys live in a configurable-width XOR-metric id
space. Each node keeps a bucketed routing table: bucket ``i`` holds peers
whose XOR distance to the owner has its highest set bit at position
``i``, capped at ``k`` entries (first come, kept; no eviction pings --
dead peers are removed when a send fails and holes are refilled from the
membership snapshot by the node layer).

Greedy lookup: forward to the known peer strictly closest to the key,
stop when no known peer beats the current node. With tables bootstrapped
from full membership this terminates at the globally closest node -- any
node at distance with top bit ``b`` from the key keeps at least one peer
in bucket ``b``, and every peer in that bucket is strictly closer to the
key -- which gives both the at-most-``width``-hops bound and network-wide
rendezvous agreement.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .predicate import canonical_name

__all__ = [
    "OverlayConfig",
    "PeerInfo",
    "RoutingTable",
    "key_for_attribute",
    "route_next_hop",
    "xor_distance",
]


class PeerInfo(NamedTuple):
    node_id: int
    endpoint: int  # simulator address; equal to node_id in this artifact
    region: str


@dataclass(frozen=True)
class OverlayConfig:
    width: int = 256  # id bits
    k: int = 20  # bucket capacity

    def __post_init__(self):
        if not 1 <= self.width <= 256:
            raise ValueError("width must be in [1, 256]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def xor_distance(a: int, b: int) -> int:
    return a ^ b


def key_for_attribute(name: str, width: int = 256) -> int:
    """Stable key for an attribute name, masked to the id width.

    Uses blake2b so keys are identical across processes and platforms;
    names are canonicalized the same way predicate parsing does.
    """
    digest = hashlib.blake2b(canonical_name(name).encode(), digest_size=32).digest()
    return int.from_bytes(digest, "big") & ((1 << width) - 1)


@dataclass
class RoutingTable:
    """K-bucket peer table for one owner id."""

    owner: int
    config: OverlayConfig
    _buckets: list[list[PeerInfo]] = field(init=False, repr=False)
    _by_id: dict[int, PeerInfo] = field(init=False, repr=False)

    def __post_init__(self):
        self._buckets = [[] for _ in range(self.config.width)]
        self._by_id = {}

    def bucket_index(self, node_id: int) -> int:
        d = xor_distance(self.owner, node_id)
        return d.bit_length() - 1

    def insert(self, peer: PeerInfo) -> bool:
        """Insert unless owner, duplicate, or the bucket is full."""
        if peer.node_id == self.owner or peer.node_id in self._by_id:
            return False
        bucket = self._buckets[self.bucket_index(peer.node_id)]
        if len(bucket) >= self.config.k:
            return False
        bucket.append(peer)
        self._by_id[peer.node_id] = peer
        return True

    def remove(self, node_id: int) -> None:
        peer = self._by_id.pop(node_id, None)
        if peer is not None:
            self._buckets[self.bucket_index(node_id)].remove(peer)

    def get(self, node_id: int) -> Optional[PeerInfo]:
        return self._by_id.get(node_id)

    def peers(self) -> list[PeerInfo]:
        return [p for bucket in self._buckets for p in bucket]

    def closest(self, key: int, n: int) -> list[PeerInfo]:
        """The n known peers closest to key, ascending distance then id."""
        return sorted(
            self._by_id.values(),
            key=lambda p: (xor_distance(p.node_id, key), p.node_id),
        )[:n]

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._by_id


def route_next_hop(owner: int, table: RoutingTable, key: int) -> Optional[PeerInfo]:
    """Greedy next hop toward key, or None when the owner is closest.

    None means the caller is the rendezvous for this key among the peers
    it knows about.
    """
    best = table.closest(key, 1)
    if not best:
        return None
    hop = best[0]
    if xor_distance(hop.node_id, key) < xor_distance(owner, key):
        return hop
    return None
