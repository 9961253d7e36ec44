"""Pre-aggregate tree over consecutive days of per-segment BSIs.

Leaves are days; the tree is laid out over the next power of two so every
node covers an aligned span (1-4, 5-6, 7, ...).  Only nodes lying fully
inside the built span exist.  A range query folds the canonical cover of
the range, e.g. days 1-7 of a 7-day tree merge the nodes {1-4}, {5-6}, {7}.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Hashable, Mapping

from ..bsi import BSI, EMPTY_BSI, AggKind, combine

SegmentBSIs = dict[int, BSI]


class RangeError(ValueError):
    pass


class NodeCheckError(AssertionError):
    pass


def _merge(kind: AggKind, a: SegmentBSIs, b: SegmentBSIs) -> SegmentBSIs:
    out = {}
    for seg in sorted(a.keys() | b.keys()):
        v = combine(kind, a.get(seg, EMPTY_BSI), b.get(seg, EMPTY_BSI))
        if v.width:
            out[seg] = v
    return out


def _check(kind: AggKind, node: BSI, left: BSI, right: BSI) -> bool:
    if kind is AggKind.SUM:
        return node.sum() == left.sum() + right.sum()
    if kind is AggKind.DISTINCT:
        return node.nonzero() == (left.nonzero() | right.nonzero())
    if kind is AggKind.MAX:
        present = [b.max() for b in (left, right) if b.width]
        return node.max() == max(present) if present else not node.width
    return node.nonzero() == (left.nonzero() & right.nonzero())


class PreAggTree:
    """Balanced aggregate tree over days ``first..last`` (inclusive)."""

    def __init__(
        self,
        first: int,
        last: int,
        kind: AggKind | str,
        leaf: Callable[[int], Mapping[int, BSI]],
        verify: int = 4,
    ):
        if last < first:
            raise RangeError("empty date span")
        self.first = first
        self.last = last
        self.kind = AggKind(kind)
        self.span = last - first + 1
        size = 1
        while size < self.span:
            size *= 2
        self.size = size
        # key: (start offset, length) relative to ``first``
        self.nodes: dict[tuple[int, int], SegmentBSIs] = {}
        for i in range(self.span):
            day = dict(leaf(first + i))
            if self.kind is AggKind.DISTINCT:
                day = {seg: BSI.binary(v.nonzero()) for seg, v in day.items()}
            self.nodes[(i, 1)] = day
        checked = 0
        length = 2
        while length <= size:
            for start in range(0, self.span - length + 1, length):
                half = length // 2
                left = self.nodes[(start, half)]
                right = self.nodes[(start + half, half)]
                node = _merge(self.kind, left, right)
                self.nodes[(start, length)] = node
                if checked < verify:
                    for seg in sorted(node)[:1]:
                        if not _check(self.kind, node[seg], left.get(seg, EMPTY_BSI), right.get(seg, EMPTY_BSI)):
                            raise NodeCheckError(f"node {start}+{length} segment {seg} inconsistent")
                    checked += 1
            length *= 2

    def decompose(self, lo: int, hi: int) -> list[tuple[int, int]]:
        """Canonical node cover of days ``lo..hi`` as (first_day, last_day) spans."""
        if lo > hi or lo < self.first or hi > self.last:
            raise RangeError(
                f"range {lo}..{hi} outside tree span {self.first}..{self.last}"
            )
        out: list[tuple[int, int]] = []

        def visit(start: int, length: int) -> None:
            a, b = start, start + length - 1
            if b < lo - self.first or a > hi - self.first:
                return
            if lo - self.first <= a and b <= hi - self.first and (start, length) in self.nodes:
                out.append((self.first + a, self.first + b))
                return
            half = length // 2
            visit(start, half)
            visit(start + half, half)

        visit(0, self.size)
        return out

    def node(self, first_day: int, last_day: int) -> SegmentBSIs:
        return self.nodes[(first_day - self.first, last_day - first_day + 1)]

    def query(self, lo: int, hi: int) -> SegmentBSIs:
        spans = self.decompose(lo, hi)
        result = self.node(*spans[0])
        for span in spans[1:]:
            result = _merge(self.kind, result, self.node(*span))
        return dict(result)

    @property
    def nbytes(self) -> int:
        return sum(b.nbytes for node in self.nodes.values() for b in node.values())


class TreeCache:
    """LRU cache of trees, evicted by total byte size."""

    def __init__(self, max_bytes: int = 256 << 20):
        self.max_bytes = max_bytes
        self._items: OrderedDict[Hashable, tuple[PreAggTree, int]] = OrderedDict()
        self.bytes = 0

    def get(self, key: Hashable, build: Callable[[], PreAggTree]) -> PreAggTree:
        hit = self._items.get(key)
        if hit is not None:
            self._items.move_to_end(key)
            return hit[0]
        tree = build()
        size = tree.nbytes
        self._items[key] = (tree, size)
        self.bytes += size
        while self.bytes > self.max_bytes and len(self._items) > 1:
            _, (_, old) = self._items.popitem(last=False)
            self.bytes -= old
        return tree

    def __contains__(self, key: Hashable) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)
