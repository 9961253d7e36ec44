import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsimetrics.bitmap import Bitmap, BitmapFormatError
from bsimetrics.bsi import (
    BSI,
    EMPTY_BSI,
    MAX_VALUE,
    AggKind,
    BSIOverflowError,
    BSIUnderflowError,
    CompareOp,
    DuplicatePositionError,
    EmptyBSIError,
    Mode,
    NotBinaryError,
    add,
    add_scalar,
    aggregate,
    compare,
    compare_scalar,
    multiply,
    multiply_binary,
    subtract,
)
from oracles import compare_oracle, dense, from_dense, scalar_oracle

N = 40
values = st.lists(st.one_of(st.just(0), st.integers(1, 9), st.integers(1, 1 << 20)), min_size=N, max_size=N)


def as_dict(x: BSI) -> dict:
    return x.to_dict()


# -- construction ----------------------------------------------------------------

def test_from_pairs_example():
    x = BSI.from_pairs([(0, 3), (2, 2)])
    assert x.width == 2
    assert x.get(1) == 0 and x.get(0) == 3 and x.get(2) == 2


def test_nonzero_of_empty():
    assert len(EMPTY_BSI.nonzero()) == 0
    assert EMPTY_BSI.width == 0


def test_construction_errors():
    with pytest.raises(DuplicatePositionError):
        BSI.from_pairs([(1, 2), (1, 3)])
    with pytest.raises(BSIOverflowError):
        BSI.from_pairs([(1, 1 << 64)])
    with pytest.raises(ValueError):
        BSI.from_pairs([(1, -1)])


def test_trailing_empty_slices_trimmed():
    x = BSI([Bitmap.from_positions([1]), Bitmap(), Bitmap()])
    assert x.width == 1


def test_get_matches_map_oracle(rng):
    pos = rng.choice(1 << 22, 10_000, replace=False)
    vals = np.minimum(np.ceil(rng.pareto(1.16, pos.size)), 1 << 40).astype(np.uint64)
    x = BSI.from_arrays(pos, vals)
    want = dict(zip(pos.tolist(), vals.tolist()))
    assert x.to_dict() == want
    for p in pos[:500].tolist():
        assert x.get(p) == want[p]
    assert x.get(int(np.setdiff1d(np.arange(1000), pos)[0])) == 0


# -- arithmetic examples -------------------------------------------------------------

def test_add_examples():
    x = BSI.from_pairs([(0, 3), (2, 2)])
    assert as_dict(x + BSI.from_pairs([(0, 1), (1, 1)])) == {0: 4, 1: 1, 2: 2}
    assert x + EMPTY_BSI == x
    four = BSI.from_pairs([(0, 3)]) + BSI.from_pairs([(0, 1)])
    assert as_dict(four) == {0: 4} and four.width == 3


def test_add_overflow():
    with pytest.raises(BSIOverflowError):
        add(BSI.from_pairs([(0, MAX_VALUE)]), BSI.from_pairs([(0, 1)]))


def test_subtract_examples():
    assert as_dict(BSI.from_pairs([(0, 4)]) - BSI.from_pairs([(0, 1)])) == {0: 3}
    x = BSI.from_pairs([(0, 4), (9, 7)])
    assert subtract(x, x) == EMPTY_BSI


def test_subtract_underflow_counts_positions():
    x = BSI.from_pairs([(0, 4), (1, 1), (2, 5)])
    y = BSI.from_pairs([(0, 5), (1, 2), (2, 5), (3, 1)])
    with pytest.raises(BSIUnderflowError) as info:
        subtract(x, y)
    assert info.value.count == 3


def test_multiply_binary_examples():
    x = BSI.from_pairs([(0, 5), (1, 7)])
    m = BSI.from_pairs([(1, 1), (2, 1)])
    assert as_dict(multiply_binary(x, m)) == {1: 7}
    assert multiply_binary(x, BSI.binary(x.nonzero())) == x
    assert multiply_binary(x, EMPTY_BSI) == EMPTY_BSI
    with pytest.raises(NotBinaryError):
        multiply_binary(x, BSI.from_pairs([(0, 2)]))


def test_multiply_examples():
    assert as_dict(BSI.from_pairs([(0, 3)]) * BSI.from_pairs([(0, 4)])) == {0: 12}
    v = BSI.from_pairs([(0, 2), (1, 3)])
    assert as_dict(aggregate(AggKind.MUL, [v, v])) == {0: 4, 1: 9}
    with pytest.raises(BSIOverflowError):
        multiply(BSI.from_pairs([(0, 1 << 40)]), BSI.from_pairs([(0, 1 << 30)]))


# -- comparisons -----------------------------------------------------------------------

def test_strict_lt_example():
    x = BSI.from_pairs([(0, 2), (2, 5)])
    y = BSI.from_pairs([(0, 3), (1, 4), (2, 5)])
    assert as_dict(compare(x, y, CompareOp.LT)) == {0: 1}


def test_strict_eq_reflexive():
    x = BSI.from_pairs([(0, 2), (5, 9), (70000, 1)])
    assert compare(x, x, "EQ") == BSI.binary(x.nonzero())


def test_total_ge_example():
    x = BSI.from_pairs([(0, 5)])
    y = BSI.from_pairs([(0, 5), (1, 2)])
    assert as_dict(compare(x, y, "GE", Mode.TOTAL)) == {0: 1}


def test_compare_scalar_examples():
    x = BSI.from_pairs([(0, 2), (1, 4), (2, 5)])
    assert as_dict(compare_scalar(x, "GE", 4)) == {1: 1, 2: 1}
    assert compare_scalar(x, "GT", 0) == BSI.binary(x.nonzero())
    assert as_dict(compare_scalar(x, "NE", 4)) == {0: 1, 2: 1}
    with pytest.raises(ValueError):
        compare_scalar(x, "LT", -1)


def test_offset_window_filter_chain():
    # bucket-id * (offset >= 2) * (offset <= 5)
    offset = BSI.from_pairs([(0, 1), (1, 3), (2, 6), (3, 5)])
    bucket = BSI.from_pairs([(0, 7), (1, 8), (2, 9), (3, 10)])
    f = aggregate(AggKind.MUL, [compare_scalar(offset, "GE", 2), compare_scalar(offset, "LE", 5)])
    assert as_dict(multiply_binary(bucket, f)) == {1: 8, 3: 10}


def test_add_scalar_examples():
    assert as_dict(add_scalar(BSI.from_pairs([(0, 2)]), 3)) == {0: 5}
    assert add_scalar(EMPTY_BSI, 7) == EMPTY_BSI
    offset = BSI.from_pairs([(0, 1), (1, 3)])
    assert as_dict(add_scalar(offset, 99)) == {0: 100, 1: 102}


@pytest.mark.parametrize("op", list(CompareOp))
@pytest.mark.parametrize("mode", list(Mode))
def test_compare_exhaustive_three_bit_grid(op, mode):
    grid = list(itertools.product(range(8), repeat=2))
    xv = [a for a, _ in grid]
    yv = [b for _, b in grid]
    got = dense(compare(from_dense(xv), from_dense(yv), op, mode), len(grid))
    assert list(got) == list(compare_oracle(xv, yv, op.value, mode.value))


@settings(max_examples=150, deadline=None)
@given(values, values)
def test_compare_property(xv, yv):
    x, y = from_dense(xv), from_dense(yv)
    for op in CompareOp:
        for mode in Mode:
            got = compare(x, y, op, mode)
            assert got.is_binary
            assert list(dense(got, N)) == list(compare_oracle(xv, yv, op.value, mode.value))


@settings(max_examples=150, deadline=None)
@given(values, st.integers(0, 1 << 21))
def test_compare_scalar_property(xv, k):
    x = from_dense(xv)
    for op in CompareOp:
        assert list(dense(compare_scalar(x, op, k), N)) == list(scalar_oracle(xv, op.value, k))


@settings(max_examples=100, deadline=None)
@given(values, values)
def test_eq_or_ne_is_common_support(xv, yv):
    x, y = from_dense(xv), from_dense(yv)
    eq = compare(x, y, "EQ").nonzero()
    ne = compare(x, y, "NE").nonzero()
    assert eq | ne == x.nonzero() & y.nonzero()
    assert len(eq & ne) == 0


# -- arithmetic properties ---------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(values, values, st.integers(0, 1000))
def test_arithmetic_property(xv, yv, k):
    x, y = from_dense(xv), from_dense(yv)
    assert list(dense(x + y, N)) == [a + b for a, b in zip(xv, yv)]
    assert list(dense(x * y, N)) == [a * b for a, b in zip(xv, yv)]
    hi = from_dense([max(a, b) for a, b in zip(xv, yv)])
    lo = from_dense([min(a, b) for a, b in zip(xv, yv)])
    assert list(dense(hi - lo, N)) == [abs(a - b) for a, b in zip(xv, yv)]
    assert list(dense(add_scalar(x, k), N)) == [a + k if a else 0 for a in xv]
    assert (x + y).sum() == x.sum() + y.sum()
    assert x + y == y + x
    mask = BSI.binary(y.nonzero())
    assert multiply_binary(x, mask) == multiply(x, mask)


@settings(max_examples=100, deadline=None)
@given(st.lists(values, min_size=1, max_size=4))
def test_aggregates_property(vs):
    bsis = [from_dense(v) for v in vs]
    cols = list(zip(*vs))
    assert list(dense(aggregate("sumBSI", bsis), N)) == [sum(c) for c in cols]
    assert list(dense(aggregate("maxBSI", bsis), N)) == [max(c) for c in cols]
    assert list(dense(aggregate("distinctPos", bsis), N)) == [int(any(c)) for c in cols]
    prod = []
    for c in cols:
        p = 1
        for v in c:
            p *= v
        prod.append(p if p < 1 << 64 else None)
    if None not in prod:
        assert list(dense(aggregate("mulBSI", bsis), N)) == prod


def test_aggregate_examples():
    assert as_dict(aggregate("distinctPos", [BSI.from_pairs([(0, 2)]), BSI.from_pairs([(1, 3)])])) == {0: 1, 1: 1}
    got = aggregate("maxBSI", [BSI.from_pairs([(0, 5)]), BSI.from_pairs([(0, 3), (1, 2)])])
    assert as_dict(got) == {0: 5, 1: 2}
    with pytest.raises(ValueError):
        aggregate("sumBSI", [])


def test_sum_count_min_max(rng):
    assert BSI.from_pairs([(0, 3), (1, 1), (2, 2)]).sum() == 6
    assert EMPTY_BSI.sum() == 0 and EMPTY_BSI.count() == 0
    with pytest.raises(EmptyBSIError):
        EMPTY_BSI.max()
    with pytest.raises(EmptyBSIError):
        EMPTY_BSI.min()
    vals = np.minimum(np.ceil(rng.pareto(1.16, 100_000)), 10**6).astype(np.uint64)
    pos = np.arange(vals.size) * 3
    x = BSI.from_arrays(pos, vals)
    assert x.sum() == int(vals.sum())
    assert x.count() == vals.size
    assert x.max() == int(vals.max()) and x.min() == int(vals.min())


def test_sum_from_slice_cardinalities():
    x = BSI.from_pairs([(i, (i * 37) % 101 + 1) for i in range(500)])
    assert sum(len(s) << i for i, s in enumerate(x.slices)) == x.sum()


# -- serialization -----------------------------------------------------------------

def test_serialization_layout_and_round_trip():
    x = BSI.from_pairs([(0, 3), (2, 2)])
    data = x.to_bytes()
    assert data[0] == 2
    first = Bitmap.from_positions([0]).to_bytes()
    assert data[1:5] == len(first).to_bytes(4, "little")
    assert data[5 : 5 + len(first)] == first
    assert BSI.from_bytes(data) == x
    assert EMPTY_BSI.to_bytes() == b"\x00"


def test_deserialize_rejects_bad_input():
    data = BSI.from_pairs([(0, 3)]).to_bytes()
    with pytest.raises(BitmapFormatError):
        BSI.from_bytes(data[:-1])
    with pytest.raises(BitmapFormatError):
        BSI.from_bytes(data + b"\x00")
    with pytest.raises(BitmapFormatError):
        BSI.from_bytes(b"\x41")
