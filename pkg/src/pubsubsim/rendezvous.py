"""Decentralized content-based publish-subscribe over rendezvous routing.

Every predicate attribute hashes to an overlay key; the live node closest
to a key is that key's rendezvous. Subscriptions travel hop-by-hop toward
the rendezvous of one chosen attribute, leaving filters behind at each
hop; published events travel toward the rendezvous of *each* distinct
attribute they carry and then flow back down the stored filter chains.

Protocol variants are orthogonal config switches:

* ``reliable``  - hop-by-hop delivery acks, a delivery tracker at the
  rendezvous (replicated to its backups), and publisher retries. Off:
  fire-and-forget forwarding.
* ``redirect``  - pure relays (one downstream filter entry for a key, no
  own subscription on it) offer their upstream a shortcut that jumps over
  them, shaving hops off the delivery path. Off: events always retrace
  the subscription path.

Fault handling, independent of variant: every node replicates its filter
tables to the ``f_backups`` peers closest to its own id (and a rendezvous
also to the peers closest to each key it serves), forwarding around dead
peers through the announced backups. Choosing key backups by closeness
makes recovery line up with routing: kill any ``f_backups`` nodes and the
closest live node to a key is still one of the copy holders, so re-routed
events find the filters.

Subscriptions are soft state. Each node re-issues its subscriptions every
``refresh_interval`` and swaps filter-table generations every second
tick; state that stopped being refreshed disappears with the swap, which
is the only unsubscribe mechanism there is.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .messages import (
    BackupStore,
    BackupStoreAck,
    EntrySnapshot,
    Event,
    EventAck,
    EventRecord,
    Handover,
    ShortcutOffer,
    ShortcutRevoke,
    Subscribe,
    SubscribeAck,
    TrackReplicate,
)
from .node import OverlayNode
from .overlay import OverlayConfig, PeerInfo, key_for_attribute, xor_distance
from .predicate import Predicate, filter_set_insert, matches
from .simnet import Simulator, Timer

log = logging.getLogger(__name__)

__all__ = ["ProtocolConfig", "PubSubNode"]

ROLE_NORMAL = ("normal",)
ROLE_HANDOVER = ("handover",)


@dataclass(frozen=True)
class ProtocolConfig:
    reliable: bool = False
    redirect: bool = False
    f_backups: int = 2
    ack_timeout: float = 400.0
    refresh_interval: float = 30_000.0
    sub_retry_limit: int = 8
    sub_retry_factor: float = 6.0  # retry clock, in ack_timeouts
    pub_retry_limit: int = 10
    tracker_resend_factor: float = 4.0
    tracker_round_cap: int = 25
    fd_delegate_threshold: int = 10
    board_timeout_factor: float = 2.0
    key_width: int = 256
    # injectable key function so tests can pin attribute placement
    key_fn: Optional[Callable[[str], int]] = None
    max_attributes: int = 16

    def attribute_key(self, name: str) -> int:
        if self.key_fn is not None:
            return self.key_fn(name)
        return key_for_attribute(name, self.key_width)


@dataclass
class FilterEntry:
    """Filters one downstream peer installed through this node."""

    peer: PeerInfo
    backups: tuple[int, ...] = ()
    filters: dict[int, list[Predicate]] = field(default_factory=dict)  # by key
    shortcuts: dict[int, int] = field(default_factory=dict)  # key -> endpoint

    def slot_count(self) -> int:
        return sum(len(preds) for preds in self.filters.values())


@dataclass
class BackupCopy:
    """Another node's replicated filter tables, held on its behalf."""

    owner: int
    token: int
    entries: dict[int, FilterEntry]
    rv_keys: tuple[int, ...]
    stored_at: float


@dataclass
class OwnSub:
    predicate: Predicate
    rv_key: int
    latest_seq: int = -1


@dataclass
class PendingSub:
    sub: OwnSub
    issued_at: float
    retries: int = 0
    timer: Optional[Timer] = None


@dataclass
class PendingPublish:
    record: EventRecord
    retries: int = 0
    timer: Optional[Timer] = None


@dataclass
class ReplWait:
    awaiting: set[int]
    continuation: Optional[Callable[[], None]]
    timer: Optional[Timer] = None
    done: bool = False


@dataclass
class AckState:
    upstream: Optional[int]
    pending: dict[int, Event]  # endpoint -> exact message sent
    acked: bool = False


@dataclass
class DeliveryTracker:
    record: EventRecord
    pending: dict[int, Event]
    backups: tuple[int, ...]
    rounds: int = 0
    timer: Optional[Timer] = None


@dataclass
class TrackedCopy:
    """Tracker state replicated from a rendezvous, held passively."""

    record: EventRecord
    pending: tuple[int, ...]


@dataclass
class HandoverRedirect:
    old_rv: int
    old_backups: tuple[int, ...]
    installed_at: float


class PubSubNode(OverlayNode):
    """One participant: subscriber, publisher, relay, rendezvous, backup.

    Every node can play all roles at once; which ones it actually plays
    falls out of key placement and the scenario script.
    """

    def __init__(self, sim: Simulator, node_id: int, region: str,
                 proto: ProtocolConfig,
                 overlay_config: Optional[OverlayConfig] = None):
        super().__init__(sim, node_id, region,
                         overlay_config or OverlayConfig(width=proto.key_width))
        self.proto = proto
        # two filter-table generations; reads hit main, writes hit both
        self.table_main: dict[int, FilterEntry] = {}
        self.table_secondary: dict[int, FilterEntry] = {}
        self.backup_copies: dict[int, BackupCopy] = {}
        self.own_subs: dict[str, OwnSub] = {}
        self.rv_keys: set[int] = set()
        self.own_backup_ids: list[int] = []
        self.advertised_shortcuts: dict[int, int] = {}
        self.pending_offers: dict[tuple[int, int], int] = {}
        self.handover_redirects: dict[int, HandoverRedirect] = {}
        self._late_joined_at: Optional[float] = None
        self._sub_seq = 0
        self._pub_seq = 0
        self._repl_token = 0
        self._tick = 0
        self._pending_subs: dict[int, PendingSub] = {}
        self._pending_pubs: dict[tuple, PendingPublish] = {}
        self._repl_waits: dict[int, ReplWait] = {}
        self._trackers: dict[tuple, Optional[DeliveryTracker]] = {}
        self._tracked: dict[tuple, TrackedCopy] = {}
        self._down_states: dict[tuple, dict[tuple, AckState]] = {}
        self._delivered_copies: set[tuple] = set()

    # -- public API -----------------------------------------------------

    def start(self) -> None:
        """Arm the periodic refresh; call once after bootstrap."""
        self._recompute_own_backups()
        self.set_timer(self.proto.refresh_interval, self._refresh_tick)

    def subscribe(self, predicate: Predicate) -> int:
        ser = predicate.serialize()
        sub = self.own_subs.get(ser)
        if sub is None:
            sub = OwnSub(predicate, self._rv_key_for(predicate))
            self.own_subs[ser] = sub
        if not self.own_backup_ids:
            self._recompute_own_backups()
        return self._issue_subscribe(sub)

    def unsubscribe(self, predicate: Predicate) -> None:
        """Stop refreshing; the network forgets the filters at the swaps."""
        self.own_subs.pop(predicate.serialize(), None)

    def publish(self, event_predicate: Predicate, payload: str = "") -> tuple[int, int]:
        if not event_predicate.is_point:
            raise ValueError("published events must be point-valued")
        event_id = (self.node_id, self._pub_seq)
        self._pub_seq += 1
        keys = sorted({self.proto.attribute_key(name)
                       for name in event_predicate.attribute_names()})
        for rv_attr in keys:
            record = EventRecord(event_id, event_predicate, payload, rv_attr, self.now)
            self._send_copy_toward_key(record, first_send=True)
        return event_id

    # -- key selection ----------------------------------------------------

    def _rv_key_for(self, predicate: Predicate) -> int:
        best = min(predicate.attribute_names(),
                   key=lambda n: (xor_distance(self.proto.attribute_key(n),
                                               self.node_id), n))
        return self.proto.attribute_key(best)

    def _rv_backup_ids(self, key: int) -> list[int]:
        return [p.node_id for p in self.closest_peers(key, self.proto.f_backups)]

    def _recompute_own_backups(self) -> None:
        self.own_backup_ids = [p.node_id
                               for p in self.closest_peers(self.node_id,
                                                           self.proto.f_backups)]

    def _match(self, sub_pred: Predicate, ev_pred: Predicate) -> bool:
        self.metrics.match_ops += 1
        return matches(sub_pred, ev_pred)

    # -- subscriptions ----------------------------------------------------

    def _issue_subscribe(self, sub: OwnSub) -> int:
        seq = self._sub_seq
        self._sub_seq += 1
        sub.latest_seq = seq
        pend = PendingSub(sub, issued_at=self.now)
        pend.timer = self.set_timer(
            self.proto.sub_retry_factor * self.proto.ack_timeout,
            lambda: self._sub_retry(seq))
        self._pending_subs[seq] = pend
        self._send_subscribe_upstream(self.node_id, seq, sub.predicate, sub.rv_key)
        return seq

    def _sub_retry(self, seq: int) -> None:
        pend = self._pending_subs.get(seq)
        if pend is None:
            return
        if pend.retries >= self.proto.sub_retry_limit:
            del self._pending_subs[seq]
            log.warning("%r gave up subscribing seq=%d", self, seq)
            return
        pend.retries += 1
        pend.timer = self.set_timer(
            self.proto.sub_retry_factor * self.proto.ack_timeout,
            lambda: self._sub_retry(seq))
        self._send_subscribe_upstream(self.node_id, seq, pend.sub.predicate,
                                      pend.sub.rv_key)

    def _send_subscribe_upstream(self, origin: int, seq: int,
                                 predicate: Predicate, rv_key: int) -> None:
        nxt = self.route_toward(rv_key)
        if nxt is None:
            # this node is the rendezvous for the key
            self.rv_keys.add(rv_key)
            targets = set(self.own_backup_ids) | set(self._rv_backup_ids(rv_key))
            self._replicate_then(
                targets, lambda: self._ack_subscription(origin, seq, rv_key))
            return
        change = self._shortcut_change_for(rv_key)
        msg = Subscribe(origin, seq, predicate, rv_key,
                        tuple(self.own_backup_ids), change)
        self.send(nxt.endpoint, msg)

    def _ack_subscription(self, origin: int, seq: int, rv_key: int) -> None:
        if origin == self.node_id:
            self._complete_own_sub(seq)
        else:
            self.send(origin, SubscribeAck(origin, seq, rv_key, self.node_id))

    def _complete_own_sub(self, seq: int) -> None:
        pend = self._pending_subs.pop(seq, None)
        if pend is None:
            return
        if pend.timer:
            pend.timer.cancel()
        self.metrics.record_sub_latency(self.now - pend.issued_at)

    def on_subscribe(self, msg: Subscribe, sender: int) -> None:
        peer = self.peer_info(sender) or PeerInfo(sender, sender, self.region)
        key = msg.rv_key
        for table in (self.table_main, self.table_secondary):
            entry = table.get(sender)
            if entry is None:
                entry = table[sender] = FilterEntry(peer)
            entry.backups = msg.sender_backups
            entry.filters[key] = filter_set_insert(
                entry.filters.get(key, []), msg.predicate)
        self.metrics.entry_writes += 1
        main_entry = self.table_main[sender]
        if msg.shortcut_change is not None:
            action, endpoint = msg.shortcut_change
            if action == "offer":
                main_entry.shortcuts[key] = endpoint
            else:
                main_entry.shortcuts.pop(key, None)
        buffered = self.pending_offers.pop((sender, key), None)
        if buffered is not None and key not in main_entry.shortcuts:
            main_entry.shortcuts[key] = buffered
        self._update_slots()
        if not self.own_backup_ids:
            self._recompute_own_backups()
        # replicate the changed tables to this node's own backups before
        # passing the subscription along: the upstream chain must never
        # get ahead of the state a backup would recover
        self._replicate_then(
            set(self.own_backup_ids),
            lambda: self._send_subscribe_upstream(msg.origin, msg.sub_seq,
                                                  msg.predicate, key))

    def on_subscribe_ack(self, msg: SubscribeAck, sender: int) -> None:
        if msg.origin == self.node_id:
            self._complete_own_sub(msg.sub_seq)

    # -- backup replication -------------------------------------------------

    def _snapshot_entries(self) -> tuple[EntrySnapshot, ...]:
        snaps = []
        for pid in sorted(self.table_main):
            e = self.table_main[pid]
            snaps.append(EntrySnapshot(
                e.peer, e.backups,
                tuple((k, tuple(preds)) for k, preds in sorted(e.filters.items()))))
        return tuple(snaps)

    def _replicate_then(self, targets: set[int],
                        continuation: Optional[Callable[[], None]]) -> None:
        targets = {t for t in sorted(targets)
                   if t != self.node_id and t not in self.believed_dead}
        if not targets:
            if continuation:
                continuation()
            return
        self._repl_token += 1
        token = self._repl_token
        store = BackupStore(self.node_id, token, self._snapshot_entries(),
                            tuple(sorted(self.rv_keys)))
        wait = ReplWait(set(targets), continuation)
        self._repl_waits[token] = wait
        for t in sorted(targets):
            self.send(t, store)
        wait.timer = self.set_timer(2 * self.proto.ack_timeout,
                                    lambda: self._repl_timeout(token))

    def _repl_timeout(self, token: int) -> None:
        wait = self._repl_waits.pop(token, None)
        if wait is None or wait.done:
            return
        wait.done = True
        if wait.continuation:
            wait.continuation()

    def _repl_satisfied(self, token: int, backup_id: int) -> None:
        wait = self._repl_waits.get(token)
        if wait is None or wait.done:
            return
        wait.awaiting.discard(backup_id)
        if not wait.awaiting:
            wait.done = True
            del self._repl_waits[token]
            if wait.timer:
                wait.timer.cancel()
            if wait.continuation:
                wait.continuation()

    def on_backup_store(self, msg: BackupStore, sender: int) -> None:
        current = self.backup_copies.get(msg.owner)
        if current is None or msg.token >= current.token:
            entries = {}
            for snap in msg.entries:
                entries[snap.peer.node_id] = FilterEntry(
                    snap.peer, snap.backups,
                    {k: list(preds) for k, preds in snap.filters})
            self.backup_copies[msg.owner] = BackupCopy(
                msg.owner, msg.token, entries, msg.rv_keys, self.now)
            self._update_slots()
        self.send(sender, BackupStoreAck(msg.owner, msg.token))

    def on_backup_store_ack(self, msg: BackupStoreAck, sender: int) -> None:
        if msg.owner == self.node_id:
            self._repl_satisfied(msg.token, sender)

    # -- event plane: publisher side -----------------------------------------

    def _send_copy_toward_key(self, record: EventRecord, first_send: bool) -> None:
        key = (record.event_id, record.rv_attr)
        if self.proto.reliable and first_send:
            pend = PendingPublish(record)
            pend.timer = self.set_timer(self.proto.ack_timeout,
                                        lambda: self._publish_retry(key))
            self._pending_pubs[key] = pend
        nxt = self.route_toward(record.rv_attr)
        if nxt is None:
            self._terminus(record, self.node_id)
        else:
            self.send(nxt.endpoint, Event(record, "up"))

    def _publish_retry(self, key: tuple) -> None:
        pend = self._pending_pubs.get(key)
        if pend is None:
            return
        if pend.retries >= self.proto.pub_retry_limit:
            del self._pending_pubs[key]
            self.metrics.publish_failures += 1
            return
        pend.retries += 1
        pend.timer = self.set_timer(self.proto.ack_timeout,
                                    lambda: self._publish_retry(key))
        self._send_copy_toward_key(pend.record, first_send=False)

    # -- event plane: routing and fan-out -------------------------------------

    def on_event(self, msg: Event, sender: int) -> None:
        record = msg.record
        if msg.backup_for is not None:
            self._process_copy(msg, sender, ("backup", msg.backup_for))
            return
        if msg.handover:
            self._process_copy(msg, sender, ROLE_HANDOVER)
            return
        if msg.direction == "up":
            nxt = self.route_toward(record.rv_attr)
            if nxt is not None:
                self.send(nxt.endpoint, Event(record, "up"))
                return
            self._terminus(record, sender)
            return
        self._process_copy(msg, sender, ROLE_NORMAL)

    def _entry_target(self, entry: FilterEntry, key: int,
                      use_shortcut: bool) -> Optional[tuple[int, Optional[int]]]:
        """Live endpoint for an entry: (endpoint, backup_for)."""
        if use_shortcut and self.proto.redirect:
            sc = entry.shortcuts.get(key)
            if sc is not None and sc not in self.believed_dead:
                return sc, None
        if entry.peer.node_id not in self.believed_dead:
            return entry.peer.endpoint, None
        for b in entry.backups:
            if b not in self.believed_dead:
                return b, entry.peer.node_id
        return None

    def _matching_targets(self, entries: dict[int, FilterEntry], key: int,
                          record: EventRecord,
                          use_shortcut: bool) -> list[tuple[int, Optional[int]]]:
        out = []
        for pid in sorted(entries):
            entry = entries[pid]
            preds = entry.filters.get(key)
            if not preds:
                continue
            if any(self._match(p, record.predicate) for p in preds):
                target = self._entry_target(entry, key, use_shortcut)
                if target is not None:
                    out.append(target)
        return out

    def _handover_target(self, key: int) -> Optional[int]:
        redirect = self.handover_redirects.get(key)
        if redirect is not None:
            for candidate in (redirect.old_rv, *redirect.old_backups):
                if candidate not in self.believed_dead and candidate != self.node_id:
                    return candidate
            return None
        if (self._late_joined_at is not None
                and self.now < self._late_joined_at + 2 * self.proto.refresh_interval):
            # freshly joined, no handover notice seen: assume the peer that
            # was closest to the key before we arrived still holds filters
            prev = self.closest_peers(key, 1)
            if prev:
                return prev[0].node_id
        return None

    def _deliver_local(self, record: EventRecord) -> None:
        copy_key = (record.event_id, record.rv_attr)
        if copy_key in self._delivered_copies:
            return
        for ser in sorted(self.own_subs):
            sub = self.own_subs[ser]
            if sub.rv_key == record.rv_attr and self._match(sub.predicate,
                                                            record.predicate):
                self._delivered_copies.add(copy_key)
                self.sim.record_delivery(self.node_id, record.event_id,
                                         record.publish_time, "tree")
                return

    def _terminus(self, record: EventRecord, sender: int) -> None:
        """The routed copy reached the closest node to its key."""
        key = (record.event_id, record.rv_attr)
        if key in self._trackers:
            tracker = self._trackers[key]
            if self.proto.reliable:
                self._ack_publisher(record)
                if tracker is not None and tracker.pending:
                    for ep in sorted(tracker.pending):
                        self.send(ep, tracker.pending[ep])
            return
        rv = record.rv_attr
        sends: list[tuple[int, Event]] = []
        resumed = self._tracked.pop(key, None)
        if resumed is not None:
            for ep in sorted(resumed.pending):
                if ep != self.node_id and ep not in self.believed_dead:
                    sends.append((ep, Event(record, "down")))
        for ep, backup_for in self._matching_targets(self.table_main, rv,
                                                     record, use_shortcut=True):
            sends.append((ep, Event(record, "down", backup_for=backup_for)))
        for owner in sorted(self.backup_copies):
            if owner not in self.believed_dead:
                continue  # live owners serve their own tables
            copy = self.backup_copies[owner]
            for ep, backup_for in self._matching_targets(copy.entries, rv,
                                                         record, use_shortcut=False):
                sends.append((ep, Event(record, "down", backup_for=backup_for)))
        handover_ep = self._handover_target(rv)
        if handover_ep is not None:
            sends.append((handover_ep, Event(record, "down", handover=True)))
        self._deliver_local(record)
        sends = self._dedupe_sends(sends)
        if self.proto.reliable:
            pending = {ep: ev for ep, ev in sends}
            tracker = DeliveryTracker(record, pending,
                                      tuple(self._rv_backup_ids(rv)))
            self._trackers[key] = tracker
            self.metrics.trackers_created += 1
            for b in tracker.backups:
                self.send(b, TrackReplicate(record, tuple(sorted(pending))))
            self._ack_publisher(record)
            if pending:
                tracker.timer = self.set_timer(
                    self.proto.tracker_resend_factor * self.proto.ack_timeout,
                    lambda: self._tracker_round(key))
            else:
                self.metrics.trackers_completed += 1
        else:
            self._trackers[key] = None
        for ep, ev in sends:
            self.send(ep, ev)

    def _dedupe_sends(self, sends: list[tuple[int, Event]]) -> list[tuple[int, Event]]:
        seen: set[tuple] = set()
        out = []
        for ep, ev in sends:
            if ep == self.node_id:
                continue
            marker = (ep, ev.backup_for, ev.handover)
            if marker in seen:
                continue
            seen.add(marker)
            out.append((ep, ev))
        return out

    def _ack_publisher(self, record: EventRecord) -> None:
        publisher = record.event_id[0]
        if publisher != self.node_id and publisher not in self.believed_dead:
            self.send(publisher, EventAck(record.event_id, record.rv_attr))

    def _tracker_round(self, key: tuple) -> None:
        tracker = self._trackers.get(key)
        if tracker is None or not tracker.pending:
            return
        if tracker.rounds >= self.proto.tracker_round_cap:
            log.warning("%r abandoned tracker %s", self, key)
            return
        tracker.rounds += 1
        for ep in sorted(tracker.pending):
            self.send(ep, tracker.pending[ep])
        tracker.timer = self.set_timer(
            self.proto.tracker_resend_factor * self.proto.ack_timeout,
            lambda: self._tracker_round(key))

    def _process_copy(self, msg: Event, sender: int, role: tuple) -> None:
        """Fan a down-traveling copy out to children and local matches."""
        record = msg.record
        rv = record.rv_attr
        key = (record.event_id, rv)
        roles = self._down_states.setdefault(key, {})
        state = roles.get(role)
        if state is not None:
            if not self.proto.reliable:
                return
            state.upstream = sender
            if state.pending:
                for ep in sorted(state.pending):
                    self.send(ep, state.pending[ep])
            else:
                self.send(sender, EventAck(record.event_id, rv))
            return
        own_subtree = False
        if role[0] == "backup":
            copy = self.backup_copies.get(role[1])
            entries = copy.entries if copy is not None else {}
            use_shortcut = False
            own_entry = entries.get(self.node_id)
            own_subtree = bool(own_entry and any(
                self._match(p, record.predicate)
                for p in own_entry.filters.get(rv, [])))
        else:
            entries = self.table_main
            use_shortcut = True
        sends = [(ep, Event(record, "down", backup_for=bf))
                 for ep, bf in self._matching_targets(entries, rv, record,
                                                      use_shortcut)]
        sends = self._dedupe_sends(sends)
        if role[0] != "backup":
            self._deliver_local(record)
        if self.proto.reliable:
            pending = {ep: ev for ep, ev in sends}
            state = AckState(upstream=sender, pending=pending)
            roles[role] = state
            if not pending:
                state.acked = True
                self.send(sender, EventAck(record.event_id, rv))
        else:
            roles[role] = AckState(upstream=None, pending={}, acked=True)
        for ep, ev in sends:
            self.send(ep, ev)
        if own_subtree:
            # the dead peer's tables list this node as a child: walk our
            # own subtree too (deduped by the normal-role state)
            self._process_copy(Event(record, "down"), sender, ROLE_NORMAL)

    def on_event_ack(self, msg: EventAck, sender: int) -> None:
        key = (msg.event_id, msg.rv_attr)
        pend = self._pending_pubs.pop(key, None)
        if pend is not None:
            if pend.timer:
                pend.timer.cancel()
        tracker = self._trackers.get(key)
        if tracker is not None and sender in tracker.pending:
            del tracker.pending[sender]
            if not tracker.pending:
                self._complete_tracker(key, tracker)
        roles = self._down_states.get(key)
        if roles:
            for role in sorted(roles):
                state = roles[role]
                if sender in state.pending:
                    del state.pending[sender]
                    if not state.pending and not state.acked:
                        state.acked = True
                        if state.upstream is not None:
                            self.send(state.upstream,
                                      EventAck(msg.event_id, msg.rv_attr))

    def _complete_tracker(self, key: tuple, tracker: DeliveryTracker) -> None:
        if tracker.timer:
            tracker.timer.cancel()
        self.metrics.trackers_completed += 1
        for b in tracker.backups:
            if b not in self.believed_dead:
                self.send(b, TrackReplicate(tracker.record, ()))

    def on_track_replicate(self, msg: TrackReplicate, sender: int) -> None:
        key = (msg.record.event_id, msg.record.rv_attr)
        if msg.pending:
            self._tracked[key] = TrackedCopy(msg.record, msg.pending)
        else:
            self._tracked.pop(key, None)

    # -- shortcuts ----------------------------------------------------------

    def _desired_shortcut(self, key: int) -> Optional[int]:
        if not self.proto.redirect:
            return None
        if any(sub.rv_key == key for sub in self.own_subs.values()):
            return None
        holders = [pid for pid in sorted(self.table_main)
                   if self.table_main[pid].filters.get(key)]
        if len(holders) != 1:
            return None
        entry = self.table_main[holders[0]]
        if entry.peer.node_id in self.believed_dead:
            return None
        sc = entry.shortcuts.get(key)
        if sc is not None and sc not in self.believed_dead:
            return sc
        return entry.peer.endpoint

    def _shortcut_change_for(self, key: int) -> Optional[tuple[str, int]]:
        desired = self._desired_shortcut(key)
        advertised = self.advertised_shortcuts.get(key)
        if desired == advertised:
            return None
        if desired is None:
            del self.advertised_shortcuts[key]
            return ("revoke", 0)
        self.advertised_shortcuts[key] = desired
        return ("offer", desired)

    def _maybe_advertise(self, key: int) -> None:
        """Send a standalone offer/revoke if the shortcut state changed."""
        change = self._shortcut_change_for(key)
        if change is None:
            return
        upstream = self.route_toward(key)
        if upstream is None:
            return
        action, endpoint = change
        if action == "offer":
            self.send(upstream.endpoint, ShortcutOffer(key, endpoint))
        else:
            self.send(upstream.endpoint, ShortcutRevoke(key))

    def on_shortcut_offer(self, msg: ShortcutOffer, sender: int) -> None:
        entry = self.table_main.get(sender)
        if entry is None:
            self.pending_offers[(sender, msg.rv_key)] = msg.target
        else:
            entry.shortcuts[msg.rv_key] = msg.target
        self._maybe_advertise(msg.rv_key)

    def on_shortcut_revoke(self, msg: ShortcutRevoke, sender: int) -> None:
        self.pending_offers.pop((sender, msg.rv_key), None)
        entry = self.table_main.get(sender)
        if entry is not None:
            entry.shortcuts.pop(msg.rv_key, None)
        self._maybe_advertise(msg.rv_key)

    # -- handover after joins -------------------------------------------------

    def on_late_join(self) -> None:
        self._late_joined_at = self.now

    def on_peer_joined(self, peer: PeerInfo) -> None:
        super().on_peer_joined(peer)
        for key in sorted(self.rv_keys):
            if (xor_distance(peer.node_id, key)
                    < xor_distance(self.node_id, key)):
                self.send(peer.node_id,
                          Handover(key, self.node_id,
                                   tuple(self._rv_backup_ids(key))))

    def on_handover(self, msg: Handover, sender: int) -> None:
        self.handover_redirects[msg.rv_key] = HandoverRedirect(
            msg.old_rv, msg.old_backups, self.now)

    # -- refresh / generation swap ---------------------------------------------

    def _refresh_tick(self) -> None:
        self._tick += 1
        if self._tick % 2 == 0:
            self._swap()
        self._recompute_own_backups()
        for ser in sorted(self.own_subs):
            self._issue_subscribe(self.own_subs[ser])
        targets = set(self.own_backup_ids)
        for key in sorted(self.rv_keys):
            targets.update(self._rv_backup_ids(key))
        self._replicate_then(targets, None)
        self.set_timer(self.proto.refresh_interval, self._refresh_tick)

    def _swap(self) -> None:
        interval = self.proto.refresh_interval
        self.table_main = self.table_secondary
        self.table_secondary = {}
        for owner in sorted(self.backup_copies):
            if self.backup_copies[owner].stored_at < self.now - 2 * interval:
                del self.backup_copies[owner]
        for key in sorted(self.handover_redirects):
            if self.handover_redirects[key].installed_at <= self.now - 2 * interval:
                del self.handover_redirects[key]
        live_keys = {k for e in self.table_main.values() for k in e.filters if e.filters[k]}
        live_keys.update(sub.rv_key for sub in self.own_subs.values())
        self.rv_keys &= live_keys
        self.advertised_shortcuts = {}
        self._update_slots()
        for key in sorted(set(live_keys)):
            self._maybe_advertise(key)

    # -- failure recovery --------------------------------------------------------

    def on_send_failure(self, dst: int, message, target_dead: bool) -> None:
        super().on_send_failure(dst, message, target_dead)
        kind = message.kind
        if kind == "subscribe":
            # re-route (dead hop) or retransmit (drop) from scratch
            self._send_subscribe_upstream(message.origin, message.sub_seq,
                                          message.predicate, message.rv_key)
            return
        if kind == "backup_store":
            if target_dead:
                self._repl_satisfied(message.token, dst)
            else:
                self.send(dst, message)
            return
        if kind == "event":
            self._recover_event_send(dst, message, target_dead)
            return
        if kind == "event_ack":
            if not target_dead and self.proto.reliable:
                self.send(dst, message)
            return
        if not target_dead:
            # control-plane drop: plain retransmit
            self.send(dst, message)

    def _recover_event_send(self, dst: int, message: Event,
                            target_dead: bool) -> None:
        record = message.record
        rv = record.rv_attr
        if not target_dead:
            if self.proto.reliable:
                self.send(dst, message)  # fast-path retransmit after a drop
            return
        if message.direction == "up":
            nxt = self.route_toward(rv)
            if nxt is None:
                self._terminus(record, self.node_id)
            else:
                self.send(nxt.endpoint, Event(record, "up"))
            return
        replacements = self._reroute_down_copy(message, dst)
        self._replace_pending((record.event_id, rv), dst, replacements)
        for ep, ev in replacements:
            self.send(ep, ev)

    def _reroute_down_copy(self, message: Event,
                           dst: int) -> list[tuple[int, Event]]:
        record = message.record
        rv = record.rv_attr
        if message.handover:
            ep = self._handover_target(rv)
            if ep is not None and ep != dst:
                return [(ep, Event(record, "down", handover=True))]
            return []
        if message.backup_for is not None:
            # a backup died; move down its owner's announced backup list
            entry = self._find_entry(message.backup_for)
            if entry is not None:
                target = self._entry_target(entry, rv, use_shortcut=False)
                if target is not None:
                    return [(target[0], Event(record, "down",
                                              backup_for=target[1]))]
            return []
        # plain child or shortcut endpoint died
        for pid in sorted(self.table_main):
            entry = self.table_main[pid]
            if entry.shortcuts.get(rv) == dst:
                del entry.shortcuts[rv]
                target = self._entry_target(entry, rv, use_shortcut=False)
                if target is not None:
                    return [(target[0], Event(record, "down",
                                              backup_for=target[1]))]
        entry = self._find_entry(dst)
        if entry is not None:
            target = self._entry_target(entry, rv, use_shortcut=False)
            if target is not None:
                return [(target[0], Event(record, "down", backup_for=target[1]))]
        return []

    def _find_entry(self, peer_id: int) -> Optional[FilterEntry]:
        entry = self.table_main.get(peer_id)
        if entry is not None:
            return entry
        for owner in sorted(self.backup_copies):
            entry = self.backup_copies[owner].entries.get(peer_id)
            if entry is not None:
                return entry
        return None

    def _replace_pending(self, key: tuple, dst: int,
                         replacements: list[tuple[int, Event]]) -> None:
        tracker = self._trackers.get(key)
        if tracker is not None and dst in tracker.pending:
            del tracker.pending[dst]
            for ep, ev in replacements:
                tracker.pending[ep] = ev
            if not tracker.pending:
                self._complete_tracker(key, tracker)
        roles = self._down_states.get(key)
        if roles:
            for role in sorted(roles):
                state = roles[role]
                if dst in state.pending:
                    del state.pending[dst]
                    for ep, ev in replacements:
                        state.pending[ep] = ev
                    if not state.pending and not state.acked:
                        state.acked = True
                        if state.upstream is not None:
                            self.send(state.upstream, EventAck(*key))

    # -- accounting ------------------------------------------------------------

    def _update_slots(self) -> None:
        slots = sum(e.slot_count() for e in self.table_main.values())
        slots += sum(e.slot_count() for e in self.table_secondary.values())
        for copy in self.backup_copies.values():
            slots += sum(e.slot_count() for e in copy.entries.values())
        self.metrics.update_entry_slots(self.node_id, slots)
