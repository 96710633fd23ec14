"""Publisher-centered delivery: multicast groups with bounded fan-out.

A publisher that knows its audience can skip rendezvous routing entirely:
subscribers register with the publisher, which matches each event against
their predicates and sends copies directly. When the direct membership
grows past ``fd_delegate_threshold`` the publisher recruits the
highest-capacity subscriber of the most crowded region as a helper and
delegates that region's low-capacity members to it, keeping every
delivery within two hops (publisher -> helper -> member).

Publishers announce their groups on advertisement boards hosted at the
rendezvous node of each attribute the group predicate mentions, so
subscribers can discover groups by attribute. Board entries expire after
two advertisement periods unless renewed; private groups are listed
without a contact endpoint.

Matching at the publisher is indexed: one interval tree per range
attribute of the group predicate (members that do not constrain an
attribute sit in that attribute's pass bucket), intersected, then
confirmed by a full predicate match. Groups without range attributes fall
back to a plain member scan.

There is deliberately no retransmission here: a dead member or helper is
discovered at send time, recorded as a miss, and (for helpers) its
delegates are reabsorbed and served directly, including for the event
being published.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .messages import (
    Advertise,
    BoardEntry,
    BoardQuery,
    BoardReply,
    FdDelegate,
    FdDelegateAck,
    FdEvent,
    FdSubscribe,
    SubscriberRecord,
)
from .predicate import Predicate, matches
from .rangetree import RangeTree
from .rendezvous import PubSubNode

log = logging.getLogger(__name__)

__all__ = ["FastNode", "MulticastGroup"]


@dataclass
class GroupIndex:
    """Per-range-attribute interval trees over member predicates."""

    trees: dict[str, RangeTree] = field(default_factory=dict)
    pass_buckets: dict[str, set[int]] = field(default_factory=dict)

    @classmethod
    def build(cls, group_predicate: Predicate,
              members: list[SubscriberRecord]) -> "GroupIndex":
        index = cls()
        for attr in group_predicate.range_attrs:
            tree = RangeTree()
            bucket: set[int] = set()
            for rec in members:
                rng = rec.sub_predicate.range_for(attr.name)
                if rng is None:
                    bucket.add(rec.node_id)
                else:
                    tree.insert(rng.lo, rng.hi, rec.node_id)
            index.trees[attr.name] = tree
            index.pass_buckets[attr.name] = bucket
        return index

    def candidates(self, event_predicate: Predicate,
                   members: dict[int, SubscriberRecord]) -> list[int]:
        if not self.trees:
            return sorted(members)
        surviving: Optional[set[int]] = None
        for name in sorted(self.trees):
            rng = event_predicate.range_for(name)
            if rng is None:
                hits = set(self.pass_buckets[name])
            else:
                hits = set(self.trees[name].stab(rng.lo))
                hits.update(self.pass_buckets[name])
            surviving = hits if surviving is None else surviving & hits
            if not surviving:
                return []
        return sorted(surviving & set(members))


@dataclass
class MulticastGroup:
    publisher: int
    predicate: Predicate
    private: bool = False
    direct: dict[int, SubscriberRecord] = field(default_factory=dict)
    delegated: dict[int, dict[int, SubscriberRecord]] = field(default_factory=dict)
    # delegations offered but not yet confirmed by the helper; the members
    # stay in ``direct`` (and are served directly) until the ack arrives,
    # so an event can never slip between the offer and the duty list
    pending_delegated: dict[int, dict[int, SubscriberRecord]] = field(
        default_factory=dict)
    index: GroupIndex = field(default_factory=GroupIndex)

    def group_id(self) -> tuple[int, str]:
        return (self.publisher, self.predicate.serialize())

    def rebuild_index(self) -> None:
        self.index = GroupIndex.build(
            self.predicate, [self.direct[i] for i in sorted(self.direct)])

    def helper_ids(self) -> list[int]:
        return sorted(self.delegated)

    def pending_member_ids(self) -> set[int]:
        return {rid for duty in self.pending_delegated.values() for rid in duty}

    def load(self) -> int:
        return len(self.direct) - len(self.pending_member_ids() & set(self.direct))


@dataclass
class PendingQuery:
    callback: Callable[[tuple[BoardEntry, ...]], None]
    timer: object = None
    done: bool = False


class FastNode(PubSubNode):
    """A node speaking both protocols; adds group, board and helper duty."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.groups: dict[str, MulticastGroup] = {}  # groups this node owns
        self.helper_duties: dict[tuple[int, str], dict[int, SubscriberRecord]] = {}
        self.fd_interests: dict[tuple[int, str], Predicate] = {}
        self.boards: dict[int, dict[tuple[int, str], BoardEntry]] = {}
        self.board_query_failed = False
        self._query_ids = itertools.count()
        self._queries: dict[int, PendingQuery] = {}

    # -- publisher side ------------------------------------------------------

    def create_group(self, predicate: Predicate, private: bool = False) -> MulticastGroup:
        group = MulticastGroup(self.node_id, predicate, private)
        self.groups[predicate.serialize()] = group
        self._advertise_group(group)
        return group

    def _advertise_group(self, group: MulticastGroup) -> None:
        endpoint = None if group.private else self.node_id
        for name in group.predicate.attribute_names():
            key = self.proto.attribute_key(name)
            msg = Advertise(key, self.node_id, group.predicate, endpoint)
            nxt = self.route_toward(key)
            if nxt is None:
                self._store_board_entry(msg)
            else:
                self.send(nxt.endpoint, msg)
        self.set_timer(self.proto.refresh_interval,
                       lambda: self._readvertise(group.predicate.serialize()))

    def _readvertise(self, ser: str) -> None:
        group = self.groups.get(ser)
        if group is not None:
            self._advertise_group(group)

    def on_fd_subscribe(self, msg: FdSubscribe, sender: int) -> None:
        group = self.groups.get(msg.group_predicate.serialize())
        if group is None:
            log.warning("%r: fd_subscribe for unknown group", self)
            return
        group.direct[msg.record.node_id] = msg.record
        # drop any stale delegation of the same member
        for helper in group.helper_ids():
            group.delegated[helper].pop(msg.record.node_id, None)
        for duty in group.pending_delegated.values():
            duty.pop(msg.record.node_id, None)
        group.rebuild_index()
        self._maybe_recruit(group)

    def _maybe_recruit(self, group: MulticastGroup) -> None:
        while group.load() > self.proto.fd_delegate_threshold:
            spoken_for = group.pending_member_ids()
            by_region: dict[str, list[SubscriberRecord]] = {}
            for rid in sorted(group.direct):
                rec = group.direct[rid]
                if (rid in group.delegated or rid in group.pending_delegated
                        or rid in spoken_for):
                    continue  # already a helper, offered one, or offered away
                by_region.setdefault(rec.region, []).append(rec)
            crowded = [r for r in sorted(by_region) if len(by_region[r]) >= 2]
            if not crowded:
                return
            region = max(crowded, key=lambda r: (len(by_region[r]), r))
            members = by_region[region]
            helper = max(members, key=lambda m: (m.capacity, -m.node_id))
            pool = sorted((m for m in members if m.node_id != helper.node_id),
                          key=lambda m: (m.capacity, m.node_id))
            batch = pool[:helper.capacity]
            if not batch:
                return
            duty = group.pending_delegated.setdefault(helper.node_id, {})
            for rec in batch:
                duty[rec.node_id] = rec
            self.send(helper.node_id,
                      FdDelegate(self.node_id, group.predicate,
                                 tuple(duty[i] for i in sorted(duty))))

    def on_fd_delegate_ack(self, msg: FdDelegateAck, sender: int) -> None:
        group = self.groups.get(msg.group_predicate.serialize())
        if group is None:
            return
        batch = group.pending_delegated.pop(sender, None)
        if not batch:
            return
        duty = group.delegated.setdefault(sender, {})
        for rid in sorted(batch):
            group.direct.pop(rid, None)
            duty[rid] = batch[rid]
        group.rebuild_index()

    def publish_fast(self, event_predicate: Predicate, payload: str = "") -> tuple[int, int]:
        if not event_predicate.is_point:
            raise ValueError("published events must be point-valued")
        event_id = (self.node_id, self._pub_seq)
        self._pub_seq += 1
        for ser in sorted(self.groups):
            self._publish_to_group(self.groups[ser], event_id,
                                   event_predicate, payload)
        return event_id

    def _publish_to_group(self, group: MulticastGroup, event_id: tuple[int, int],
                          event_predicate: Predicate, payload: str) -> None:
        ev = FdEvent(self.node_id, group.predicate, event_id, event_predicate,
                     payload, self.now)
        for rid in group.index.candidates(event_predicate, group.direct):
            if rid in group.delegated:
                continue  # helpers get their copy below
            if self._match(group.direct[rid].sub_predicate, event_predicate):
                if rid == self.node_id:
                    self.sim.record_delivery(rid, event_id, ev.publish_time,
                                             "direct")
                else:
                    self.send(rid, ev)
        for helper in group.helper_ids():
            helper_rec = group.direct.get(helper)
            helper_matches = helper_rec is not None and self._match(
                helper_rec.sub_predicate, event_predicate)
            duty = group.delegated[helper]
            any_delegate = any(self._match(duty[i].sub_predicate, event_predicate)
                               for i in sorted(duty))
            if helper_matches or any_delegate:
                self.send(helper, FdEvent(self.node_id, group.predicate,
                                          event_id, event_predicate, payload,
                                          ev.publish_time, helper_copy=True))

    def _reabsorb(self, group: MulticastGroup, helper: int,
                  current: Optional[FdEvent]) -> None:
        """A helper died: take its delegates back and cover this event."""
        duty = group.delegated.pop(helper, {})
        group.pending_delegated.pop(helper, None)
        group.direct.pop(helper, None)
        for rid in sorted(duty):
            group.direct[rid] = duty[rid]
        group.rebuild_index()
        if current is not None:
            for rid in sorted(duty):
                if self._match(duty[rid].sub_predicate, current.predicate):
                    self.send(rid, FdEvent(current.publisher,
                                           current.group_predicate,
                                           current.event_id, current.predicate,
                                           current.payload, current.publish_time))

    # -- subscriber side ---------------------------------------------------------

    def fd_join(self, publisher: int, group_predicate: Predicate,
                own_predicate: Predicate, capacity: int) -> None:
        self.fd_interests[(publisher, group_predicate.serialize())] = own_predicate
        record = SubscriberRecord(self.node_id, self.node_id, self.region,
                                  capacity, own_predicate)
        if publisher == self.node_id:
            group = self.groups.get(group_predicate.serialize())
            if group is not None:
                group.direct[self.node_id] = record
                group.rebuild_index()
            return
        self.send(publisher, FdSubscribe(publisher, group_predicate, record))

    def on_fd_delegate(self, msg: FdDelegate, sender: int) -> None:
        duty_key = (msg.publisher, msg.group_predicate.serialize())
        self.helper_duties[duty_key] = {r.node_id: r for r in msg.records}
        self.send(msg.publisher, FdDelegateAck(msg.publisher,
                                               msg.group_predicate,
                                               len(msg.records)))

    def on_fd_event(self, msg: FdEvent, sender: int) -> None:
        if msg.helper_copy:
            duty = self.helper_duties.get(
                (msg.publisher, msg.group_predicate.serialize()), {})
            relay = FdEvent(msg.publisher, msg.group_predicate, msg.event_id,
                            msg.predicate, msg.payload, msg.publish_time)
            for rid in sorted(duty):
                if self._match(duty[rid].sub_predicate, msg.predicate):
                    self.send(rid, relay)
        own = self.fd_interests.get((msg.publisher, msg.group_predicate.serialize()))
        if own is not None and self._match(own, msg.predicate):
            via = "direct" if sender == msg.publisher else "helper"
            self.sim.record_delivery(self.node_id, msg.event_id,
                                     msg.publish_time, via)

    # -- boards --------------------------------------------------------------------

    def _store_board_entry(self, msg: Advertise) -> None:
        board = self.boards.setdefault(msg.attr_key, {})
        board[(msg.publisher, msg.group_predicate.serialize())] = BoardEntry(
            msg.publisher, msg.group_predicate, msg.endpoint,
            self.now + 2 * self.proto.refresh_interval)

    def on_advertise(self, msg: Advertise, sender: int) -> None:
        nxt = self.route_toward(msg.attr_key)
        if nxt is None:
            self._store_board_entry(msg)
        else:
            self.send(nxt.endpoint, msg)

    def query_boards(self, attr_name: str,
                     callback: Callable[[tuple[BoardEntry, ...]], None]) -> None:
        key = self.proto.attribute_key(attr_name)
        qid = next(self._query_ids)
        msg = BoardQuery(key, qid, self.node_id)
        nxt = self.route_toward(key)
        if nxt is None:
            callback(self._live_board_entries(key))
            return
        pending = PendingQuery(callback)
        self._queries[qid] = pending
        pending.timer = self.set_timer(
            self.proto.board_timeout_factor * self.proto.ack_timeout,
            lambda: self._query_timeout(qid))
        self.send(nxt.endpoint, msg)

    def _query_timeout(self, qid: int) -> None:
        pending = self._queries.pop(qid, None)
        if pending is None or pending.done:
            return
        pending.done = True
        self.board_query_failed = True
        pending.callback(())

    def _live_board_entries(self, key: int) -> tuple[BoardEntry, ...]:
        board = self.boards.get(key, {})
        for gid in sorted(board):
            if board[gid].expires_at <= self.now:
                del board[gid]
        return tuple(board[gid] for gid in sorted(board))

    def on_board_query(self, msg: BoardQuery, sender: int) -> None:
        nxt = self.route_toward(msg.attr_key)
        if nxt is not None:
            self.send(nxt.endpoint, msg)
            return
        reply = BoardReply(msg.query_id, self._live_board_entries(msg.attr_key))
        if msg.asker == self.node_id:
            self.on_board_reply(reply, self.node_id)
        else:
            self.send(msg.asker, reply)

    def on_board_reply(self, msg: BoardReply, sender: int) -> None:
        pending = self._queries.pop(msg.query_id, None)
        if pending is None or pending.done:
            return
        pending.done = True
        if pending.timer:
            pending.timer.cancel()
        pending.callback(msg.entries)

    # -- failure handling --------------------------------------------------------

    def on_send_failure(self, dst: int, message, target_dead: bool) -> None:
        if message.kind == "fd_event":
            if target_dead:
                self.mark_dead(dst)
                self._fd_target_died(dst, message)
            return
        if message.kind in ("fd_subscribe", "fd_delegate", "fd_delegate_ack",
                            "advertise", "board_query", "board_reply"):
            if not target_dead:
                self.send(dst, message)  # retransmit control drops
            elif message.kind == "board_query":
                self.mark_dead(dst)
                nxt = self.route_toward(message.attr_key)
                if nxt is not None:
                    self.send(nxt.endpoint, message)
                else:
                    # we became the board host; answer ourselves
                    self.on_board_query(message, self.node_id)
            elif message.kind == "fd_delegate":
                # offered helper died before confirming; the members were
                # never moved, so just withdraw the offer
                self.mark_dead(dst)
                group = self.groups.get(message.group_predicate.serialize())
                if group is not None:
                    group.pending_delegated.pop(dst, None)
                    group.direct.pop(dst, None)
                    group.rebuild_index()
            else:
                self.mark_dead(dst)
            return
        super().on_send_failure(dst, message, target_dead)

    def _fd_target_died(self, dst: int, message: FdEvent) -> None:
        group = self.groups.get(message.group_predicate.serialize())
        if group is None or message.publisher != self.node_id:
            # helper-relayed copy failed: the member just misses it
            self.metrics.fd_misses += 1
            return
        if message.helper_copy and dst in group.delegated:
            self.metrics.fd_misses += 1  # the helper's own subscription
            self._reabsorb(group, dst, message)
            return
        group.direct.pop(dst, None)
        group.pending_delegated.pop(dst, None)
        group.rebuild_index()
        self.metrics.fd_misses += 1
