import math

import pytest

from bsimetrics.bsi import BSI, EMPTY_BSI, AggKind, aggregate
from bsimetrics.engine import PreAggTree, RangeError, TreeCache


def leaves(first, n, segments=2):
    """Deterministic per-day, per-segment BSIs with some empty segments."""
    out = {}
    for d in range(first, first + n):
        out[d] = {
            s: BSI.from_pairs([(p, (d * 7 + p * 3 + s) % 11) for p in range(12) if (d * 7 + p * 3 + s) % 11])
            for s in range(segments)
            if (d + s) % 5
        }
    return out


def fold(kind, days, first, last):
    segs = set().union(*(days[d].keys() for d in range(first, last + 1)))
    out = {}
    for s in segs:
        v = aggregate(kind, [days[d].get(s, EMPTY_BSI) for d in range(first, last + 1)])
        if v.width:
            out[s] = v
    return out


def test_seven_day_cover_is_three_nodes():
    days = leaves(1, 7)
    tree = PreAggTree(1, 7, "sumBSI", days.__getitem__)
    assert tree.decompose(1, 7) == [(1, 4), (5, 6), (7, 7)]
    assert tree.query(1, 7) == fold(AggKind.SUM, days, 1, 7)


def test_single_day_is_leaf():
    days = leaves(10, 5)
    tree = PreAggTree(10, 14, "sumBSI", days.__getitem__)
    assert tree.decompose(12, 12) == [(12, 12)]
    assert tree.query(12, 12) == {s: v for s, v in days[12].items() if v.width}


@pytest.mark.parametrize("kind", list(AggKind))
def test_all_ranges_of_eight_days(kind):
    days = leaves(0, 8)
    tree = PreAggTree(0, 7, kind, days.__getitem__)
    for lo in range(8):
        for hi in range(lo, 8):
            assert tree.query(lo, hi) == fold(kind, days, lo, hi)


def test_node_count_bound_up_to_64():
    for n in range(1, 65):
        days = {d: {} for d in range(n)}
        tree = PreAggTree(0, n - 1, "sumBSI", days.__getitem__, verify=0)
        bound = max(1, 2 * math.ceil(math.log2(n)))
        for lo in range(n):
            for hi in range(lo, n):
                cover = tree.decompose(lo, hi)
                assert len(cover) <= bound
                assert cover[0][0] == lo and cover[-1][1] == hi
                assert all(b + 1 == c for (_, b), (c, _) in zip(cover, cover[1:]))


def test_out_of_span():
    days = leaves(0, 4)
    tree = PreAggTree(0, 3, "sumBSI", days.__getitem__)
    with pytest.raises(RangeError):
        tree.query(0, 4)
    with pytest.raises(RangeError):
        tree.query(3, 2)


def test_cache_evicts_by_bytes():
    days = leaves(0, 4)
    built = []

    def build():
        built.append(1)
        return PreAggTree(0, 3, "sumBSI", days.__getitem__)

    cache = TreeCache(max_bytes=1)
    a = cache.get("a", build)
    assert cache.get("a", build) is a and len(built) == 1
    cache.get("b", build)
    assert "a" not in cache and "b" in cache and len(cache) == 1
