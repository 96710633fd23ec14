"""Content predicates: parsing, matching, covering, merging.

A predicate is a conjunction of attributes of two kinds:

- ``Topic("football")`` -- the event must carry the same topic attribute.
- ``Range("price", lo, hi)`` -- the event must carry a point value for
  ``price`` inside the closed interval ``[lo, hi]``.

Events are themselves predicates whose every Range is a single point
(``lo == hi``); an event matches a subscription when it carries every
attribute the subscription names and every point falls inside the
subscription's interval. Extra event attributes never disqualify a match.

Interval endpoints are exact rationals (:class:`fractions.Fraction`) so
interval unions and containment behave exactly, with no float edge cases.

Text form uses ``/`` between attributes and ``name[lo,hi]`` for ranges::

    apple/france/price[0,1]

Attribute names are canonicalized: surrounding whitespace stripped, the
name lowercased, and internal whitespace runs joined with ``-`` (so
``"Tom Brady"`` becomes ``tom-brady``).

Filter tables store predicates in canonical merged form. Two predicates
merge only when the result has exactly the same match set as their union:
either one covers the other, or they are identical apart from a single
Range attribute whose intervals overlap or touch.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

DEFAULT_MAX_ATTRIBUTES = 16

__all__ = [
    "DEFAULT_MAX_ATTRIBUTES",
    "DuplicateAttributeError",
    "InvalidRangeError",
    "Predicate",
    "PredicateError",
    "PredicateSyntaxError",
    "Range",
    "Topic",
    "canonical_name",
    "covers",
    "ensure_event_predicate",
    "filter_set_insert",
    "matches",
    "parse_predicate",
    "try_merge",
]


class PredicateError(ValueError):
    """Base class for predicate construction and use errors."""


class PredicateSyntaxError(PredicateError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class InvalidRangeError(PredicateError):
    pass


class DuplicateAttributeError(PredicateError):
    pass


def canonical_name(raw: str) -> str:
    """Trim, lowercase, and join internal whitespace runs with '-'."""
    return "-".join(raw.strip().lower().split())


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # floats are accepted for convenience but converted exactly
        return Fraction(value).limit_denominator(10**12)
    return Fraction(value)


@dataclass(frozen=True, order=True)
class Topic:
    name: str

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        if not self.name:
            raise PredicateError("topic name must be non-empty")

    def serialize(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Range:
    name: str
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        if not self.name:
            raise PredicateError("range attribute name must be non-empty")
        object.__setattr__(self, "lo", _as_fraction(self.lo))
        object.__setattr__(self, "hi", _as_fraction(self.hi))
        if self.lo > self.hi:
            raise InvalidRangeError(f"empty interval [{self.lo},{self.hi}]")

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi

    def serialize(self) -> str:
        return f"{self.name}[{self.lo},{self.hi}]"


@dataclass(frozen=True)
class Predicate:
    """Immutable conjunction of attributes, kept in canonical order.

    Construct with :meth:`of` or :func:`parse_predicate`; the raw
    constructor expects already-sorted, already-validated tuples.
    """

    topic_attrs: tuple[Topic, ...]
    range_attrs: tuple[Range, ...]
    _ranges_by_name: dict = field(
        init=False, repr=False, compare=False, hash=False, default=None
    )

    def __post_init__(self):
        object.__setattr__(
            self, "_ranges_by_name", {r.name: r for r in self.range_attrs}
        )

    @classmethod
    def of(cls, *attributes, max_attributes: int = DEFAULT_MAX_ATTRIBUTES) -> "Predicate":
        topics: list[Topic] = []
        ranges: list[Range] = []
        seen: set[tuple[str, str]] = set()
        for attr in attributes:
            if isinstance(attr, Topic):
                key = ("topic", attr.name)
                topics.append(attr)
            elif isinstance(attr, Range):
                key = ("range", attr.name)
                ranges.append(attr)
            else:
                raise PredicateError(f"not an attribute: {attr!r}")
            if key in seen:
                raise DuplicateAttributeError(f"duplicate attribute {key[1]!r}")
            seen.add(key)
        if not seen:
            raise PredicateError("a predicate needs at least one attribute")
        if len(seen) > max_attributes:
            raise PredicateError(
                f"too many attributes ({len(seen)} > {max_attributes})"
            )
        return cls(tuple(sorted(topics)), tuple(sorted(ranges)))

    @property
    def attributes(self) -> tuple:
        return self.topic_attrs + self.range_attrs

    def attribute_names(self) -> tuple[str, ...]:
        """Distinct attribute names in sorted order (used for keying)."""
        names = {t.name for t in self.topic_attrs} | {r.name for r in self.range_attrs}
        return tuple(sorted(names))

    @property
    def is_point(self) -> bool:
        return all(r.is_point for r in self.range_attrs)

    def range_for(self, name: str) -> Optional[Range]:
        return self._ranges_by_name.get(name)

    def serialize(self) -> str:
        return "/".join(a.serialize() for a in self.attributes)

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.serialize()


def ensure_event_predicate(pred: Predicate) -> Predicate:
    """Validate that every Range in ``pred`` is a single point."""
    if not pred.is_point:
        raise PredicateError(
            f"event predicates must carry point values: {pred.serialize()}"
        )
    return pred


# ---------------------------------------------------------------------------
# parsing

_ATTR_RE = re.compile(
    r"""^
    (?P<name>[^\[\]]+?)
    (?:\[(?P<lo>[^,\[\]]+),(?P<hi>[^,\[\]]+)\])?
    $""",
    re.VERBOSE,
)


def _split_attrs(text: str) -> list[tuple[int, str]]:
    """Split on '/' outside brackets; rational endpoints contain '/'."""
    parts: list[tuple[int, str]] = []
    start = 0
    depth = 0
    for i, ch in enumerate(text):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth = max(0, depth - 1)
        elif ch == "/" and depth == 0:
            parts.append((start, text[start:i]))
            start = i + 1
    parts.append((start, text[start:]))
    return parts


def parse_predicate(
    text: str, max_attributes: int = DEFAULT_MAX_ATTRIBUTES
) -> Predicate:
    """Parse ``attr/attr/...`` with ranges written ``name[lo,hi]``.

    Raises :class:`PredicateSyntaxError` (with character position),
    :class:`InvalidRangeError` or :class:`DuplicateAttributeError`.
    """
    if not isinstance(text, str) or not text.strip():
        raise PredicateSyntaxError("empty predicate", 0)
    attrs: list = []
    for pos, part in _split_attrs(text):
        if not part.strip():
            raise PredicateSyntaxError("empty attribute", pos)
        m = _ATTR_RE.match(part.strip())
        if m is None:
            raise PredicateSyntaxError(f"cannot parse attribute {part.strip()!r}", pos)
        name = m.group("name")
        if m.group("lo") is None:
            attrs.append(Topic(name))
        else:
            try:
                lo = Fraction(m.group("lo").strip())
                hi = Fraction(m.group("hi").strip())
            except (ValueError, ZeroDivisionError):
                raise PredicateSyntaxError(
                    f"bad interval endpoint in {part.strip()!r}", pos
                ) from None
            attrs.append(Range(name, lo, hi))
    return Predicate.of(*attrs, max_attributes=max_attributes)


# ---------------------------------------------------------------------------
# matching / covering / merging


def matches(sub: Predicate, ev: Predicate) -> bool:
    """True when point-valued event ``ev`` satisfies subscription ``sub``."""
    ensure_event_predicate(ev)
    ev_topics = {t.name for t in ev.topic_attrs}
    for t in sub.topic_attrs:
        if t.name not in ev_topics:
            return False
    for r in sub.range_attrs:
        point = ev.range_for(r.name)
        if point is None or not (r.lo <= point.lo <= r.hi):
            return False
    return True


def covers(general: Predicate, specific: Predicate) -> bool:
    """True when every event matching ``specific`` also matches ``general``.

    Syntactic rule: general's topics are a subset of specific's, and every
    Range of general contains a same-named Range of specific.
    """
    gt = {t.name for t in general.topic_attrs}
    st_ = {t.name for t in specific.topic_attrs}
    if not gt <= st_:
        return False
    for r in general.range_attrs:
        s = specific.range_for(r.name)
        if s is None or not (r.lo <= s.lo and s.hi <= r.hi):
            return False
    return True


def try_merge(a: Predicate, b: Predicate) -> Optional[Predicate]:
    """Merge two filters when the result's match set is exactly the union.

    Either one covers the other (keep the general one), or the two are
    identical apart from one Range attribute whose intervals overlap or
    touch (take the interval union). Returns None when no exact merge
    exists; conservative by design so routing decisions never widen.
    """
    if covers(a, b):
        return a
    if covers(b, a):
        return b
    if a.topic_attrs != b.topic_attrs or len(a.range_attrs) != len(b.range_attrs):
        return None
    diff = None
    for ra, rb in zip(a.range_attrs, b.range_attrs):
        if ra.name != rb.name:
            return None
        if ra == rb:
            continue
        if diff is not None:
            return None  # more than one differing range attribute
        diff = (ra, rb)
    if diff is None:
        return a  # identical (covers should have caught this)
    ra, rb = diff
    if max(ra.lo, rb.lo) > min(ra.hi, rb.hi):
        return None  # disjoint with a gap: union is not an interval
    union = Range(ra.name, min(ra.lo, rb.lo), max(ra.hi, rb.hi))
    new_ranges = tuple(union if r.name == ra.name else r for r in a.range_attrs)
    return Predicate(a.topic_attrs, new_ranges)


def filter_set_insert(filters: Iterable[Predicate], f: Predicate) -> list[Predicate]:
    """Insert ``f`` into a canonical filter set, merging to fixpoint.

    The input is assumed canonical (no mergeable pair). The result is
    again canonical and sorted by serialization; its union of match sets
    equals the old union plus ``f``'s match set, exactly.
    """
    items = list(filters)
    pending = [f]
    while pending:
        cand = pending.pop()
        for i, existing in enumerate(items):
            merged = try_merge(existing, cand)
            if merged is not None:
                del items[i]
                pending.append(merged)
                break
        else:
            items.append(cand)
    items.sort(key=lambda p: p.serialize())
    return items
