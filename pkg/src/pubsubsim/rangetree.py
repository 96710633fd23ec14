"""Interval tree for stabbing queries over closed intervals.

Binary search tree keyed on interval low endpoints, each node augmented
with the maximum high endpoint in its subtree. A stabbing query for v
skips any subtree whose max-high is below v and any right subtree whose
low endpoints already exceed v. Insertion order is deterministic, no
rebalancing; fine at the scales the multicast groups see, and rebuilt
wholesale when group membership changes.
"""
from __future__ import annotations

from typing import Any, Optional

__all__ = ["RangeTree"]


class _Node:
    __slots__ = ("lo", "hi", "items", "max_hi", "left", "right")

    def __init__(self, lo, hi, item):
        self.lo = lo
        self.hi = hi
        self.items = [item]
        self.max_hi = hi
        self.left: Optional[_Node] = None
        self.right: Optional[_Node] = None


class RangeTree:
    def __init__(self):
        self._root: Optional[_Node] = None
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def insert(self, lo, hi, item: Any) -> None:
        if lo > hi:
            raise ValueError(f"empty interval [{lo},{hi}]")
        self._size += 1
        if self._root is None:
            self._root = _Node(lo, hi, item)
            return
        node = self._root
        while True:
            if node.max_hi < hi:
                node.max_hi = hi
            if (lo, hi) == (node.lo, node.hi):
                node.items.append(item)
                return
            if lo < node.lo or (lo == node.lo and hi < node.hi):
                if node.left is None:
                    node.left = _Node(lo, hi, item)
                    return
                node = node.left
            else:
                if node.right is None:
                    node.right = _Node(lo, hi, item)
                    return
                node = node.right

    def stab(self, v) -> list:
        """All items whose closed interval contains v, in insertion-tree order."""
        out: list = []
        stack = [self._root] if self._root is not None else []
        while stack:
            node = stack.pop()
            if node.max_hi < v:
                continue
            if node.lo <= v:
                if v <= node.hi:
                    out.extend(node.items)
                if node.right is not None:
                    stack.append(node.right)
            if node.left is not None:
                stack.append(node.left)
        return out
