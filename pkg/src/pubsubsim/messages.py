"""Wire message vocabulary for both protocols.

Messages are plain frozen dataclasses; they are never serialized for
transport (the simulator passes objects), only rendered into trace
records. Every message exposes ``kind`` (stable snake_case name, used for
per-kind counters) and ``trace_fields()`` (compact ids for trace lines).

Decentralized protocol:

==================  =====================================================
subscribe           predicate + chosen rendezvous key, forwarded hop by
                    hop toward the key; carries the forwarding hop's own
                    backup endpoints and an optional inline shortcut
                    change so filter and shortcut updates apply atomically
subscribe_ack       rendezvous -> subscriber, closes the latency clock
event               one routed copy of a published event; ``direction``
                    "up" (toward rendezvous) or "down" (reverse path);
                    ``backup_for`` marks a copy redirected to a dead
                    peer's backup; ``handover`` marks the new-rendezvous
                    double-forward during a handover window
event_ack           child -> parent delivery confirmation, aggregated up
                    the reverse path (reliable variants)
backup_store        full filter-table snapshot replicated to a backup
backup_store_ack    confirms a backup_store (subscription paths wait for
                    these before forwarding upstream)
shortcut_offer      "jump over me to this endpoint for this key"
shortcut_revoke     withdraws a previously offered shortcut
track_replicate     rendezvous tracker state pushed to its backups before
                    the publisher ack (reliable variants)
handover            tells a newly joined, closer node who the previous
                    rendezvous for a key was
==================  =====================================================

Publisher-centered protocol: ``advertise`` / ``board_query`` /
``board_reply`` manage advertisement boards at attribute rendezvous
nodes; ``fd_subscribe`` joins a multicast group at the publisher;
``fd_delegate`` hands a batch of subscriber records to a helper;
``fd_event`` carries a published event directly to subscribers (one hop)
or through a single helper (two hops).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Optional

from .overlay import PeerInfo
from .predicate import Predicate

__all__ = [
    "Advertise",
    "BackupStore",
    "BackupStoreAck",
    "BoardEntry",
    "BoardQuery",
    "BoardReply",
    "EntrySnapshot",
    "Event",
    "EventAck",
    "EventRecord",
    "FdDelegate",
    "FdEvent",
    "FdSubscribe",
    "Handover",
    "ShortcutOffer",
    "ShortcutRevoke",
    "Subscribe",
    "SubscribeAck",
    "SubscriberRecord",
    "TrackReplicate",
]


@dataclass(frozen=True)
class EventRecord:
    """One routed copy of a published event."""

    event_id: tuple[int, int]  # (publisher id, publisher sequence)
    predicate: Predicate  # point-valued
    payload: str
    rv_attr: int  # the attribute key this copy is routed under
    publish_time: float

    def copy_key(self) -> tuple:
        return (self.event_id, self.rv_attr)


@dataclass(frozen=True)
class Subscribe:
    kind: ClassVar[str] = "subscribe"
    origin: int
    sub_seq: int
    predicate: Predicate
    rv_key: int
    sender_backups: tuple[int, ...]
    # inline shortcut change riding along with the forwarded filter:
    # ("offer", endpoint) | ("revoke", 0) | None
    shortcut_change: Optional[tuple[str, int]] = None

    def trace_fields(self):
        return {"origin": self.origin, "seq": self.sub_seq, "rv": self.rv_key,
                "pred": self.predicate.serialize()}


@dataclass(frozen=True)
class SubscribeAck:
    kind: ClassVar[str] = "subscribe_ack"
    origin: int
    sub_seq: int
    rv_key: int
    rendezvous: int

    def trace_fields(self):
        return {"origin": self.origin, "seq": self.sub_seq, "rv": self.rv_key}


@dataclass(frozen=True)
class Event:
    kind: ClassVar[str] = "event"
    record: EventRecord
    direction: str  # "up" toward the rendezvous, "down" on reverse paths
    backup_for: Optional[int] = None  # dead peer this copy substitutes for
    handover: bool = False

    def trace_fields(self):
        f = {"event": list(self.record.event_id), "rv": self.record.rv_attr,
             "dir": self.direction}
        if self.backup_for is not None:
            f["backup_for"] = self.backup_for
        if self.handover:
            f["handover"] = True
        return f


@dataclass(frozen=True)
class EventAck:
    kind: ClassVar[str] = "event_ack"
    event_id: tuple[int, int]
    rv_attr: int

    def trace_fields(self):
        return {"event": list(self.event_id), "rv": self.rv_attr}


@dataclass(frozen=True)
class EntrySnapshot:
    """One filter-table entry as replicated to a backup."""

    peer: PeerInfo
    backups: tuple[int, ...]
    filters: tuple[tuple[int, tuple[Predicate, ...]], ...]  # (rv_key, preds)


@dataclass(frozen=True)
class BackupStore:
    kind: ClassVar[str] = "backup_store"
    owner: int
    token: int
    entries: tuple[EntrySnapshot, ...]
    rv_keys: tuple[int, ...]  # keys the owner currently serves as rendezvous

    def trace_fields(self):
        return {"owner": self.owner, "token": self.token,
                "entries": len(self.entries)}


@dataclass(frozen=True)
class BackupStoreAck:
    kind: ClassVar[str] = "backup_store_ack"
    owner: int
    token: int

    def trace_fields(self):
        return {"owner": self.owner, "token": self.token}


@dataclass(frozen=True)
class ShortcutOffer:
    kind: ClassVar[str] = "shortcut_offer"
    rv_key: int
    target: int  # endpoint the upstream may jump to

    def trace_fields(self):
        return {"rv": self.rv_key, "target": self.target}


@dataclass(frozen=True)
class ShortcutRevoke:
    kind: ClassVar[str] = "shortcut_revoke"
    rv_key: int

    def trace_fields(self):
        return {"rv": self.rv_key}


@dataclass(frozen=True)
class TrackReplicate:
    kind: ClassVar[str] = "track_replicate"
    record: EventRecord
    pending: tuple[int, ...]  # endpoints still unconfirmed

    def trace_fields(self):
        return {"event": list(self.record.event_id), "rv": self.record.rv_attr,
                "pending": len(self.pending)}


@dataclass(frozen=True)
class Handover:
    kind: ClassVar[str] = "handover"
    rv_key: int
    old_rv: int
    old_backups: tuple[int, ...]

    def trace_fields(self):
        return {"rv": self.rv_key, "old": self.old_rv}


# ---------------------------------------------------------------------------
# publisher-centered protocol


@dataclass(frozen=True)
class SubscriberRecord:
    node_id: int
    endpoint: int
    region: str
    capacity: int  # how many delegated subscribers this node could serve
    sub_predicate: Predicate


@dataclass(frozen=True)
class BoardEntry:
    group_publisher: int
    group_predicate: Predicate
    endpoint: Optional[int]  # None for private groups
    expires_at: float


@dataclass(frozen=True)
class Advertise:
    kind: ClassVar[str] = "advertise"
    attr_key: int
    publisher: int
    group_predicate: Predicate
    endpoint: Optional[int]  # omitted (None) when the group is private

    def trace_fields(self):
        return {"attr": self.attr_key, "publisher": self.publisher}


@dataclass(frozen=True)
class BoardQuery:
    kind: ClassVar[str] = "board_query"
    attr_key: int
    query_id: int
    asker: int

    def trace_fields(self):
        return {"attr": self.attr_key, "query": self.query_id, "asker": self.asker}


@dataclass(frozen=True)
class BoardReply:
    kind: ClassVar[str] = "board_reply"
    query_id: int
    entries: tuple[BoardEntry, ...]

    def trace_fields(self):
        return {"query": self.query_id, "entries": len(self.entries)}


@dataclass(frozen=True)
class FdSubscribe:
    kind: ClassVar[str] = "fd_subscribe"
    publisher: int
    group_predicate: Predicate
    record: SubscriberRecord

    def trace_fields(self):
        return {"publisher": self.publisher, "subscriber": self.record.node_id}


@dataclass(frozen=True)
class FdDelegate:
    kind: ClassVar[str] = "fd_delegate"
    publisher: int
    group_predicate: Predicate
    records: tuple[SubscriberRecord, ...]

    def trace_fields(self):
        return {"publisher": self.publisher, "records": len(self.records)}


@dataclass(frozen=True)
class FdDelegateAck:
    kind: ClassVar[str] = "fd_delegate_ack"
    publisher: int
    group_predicate: Predicate
    count: int  # duty-list size the helper now holds

    def trace_fields(self):
        return {"publisher": self.publisher, "count": self.count}


@dataclass(frozen=True)
class FdEvent:
    kind: ClassVar[str] = "fd_event"
    publisher: int
    group_predicate: Predicate
    event_id: tuple[int, int]
    predicate: Predicate  # point-valued event content
    payload: str
    publish_time: float
    helper_copy: bool = False  # True on the publisher->helper hop

    def trace_fields(self):
        return {"event": list(self.event_id), "helper": self.helper_copy}
