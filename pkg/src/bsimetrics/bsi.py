"""Bit-sliced index: a column of non-negative integers as a stack of bitmaps.

Slice ``i`` holds every position whose value has bit ``i`` set.  A value of
zero is indistinguishable from "no row", so zero means absent throughout.
All arithmetic works on whole slices with bitmap AND/OR/XOR/ANDNOT; no
operation here loops over individual rows.
"""

from __future__ import annotations

import enum
import struct
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .bitmap import EMPTY, Bitmap, BitmapFormatError, TruncatedPayloadError, union_all

MAX_SLICES = 64
MAX_VALUE = (1 << MAX_SLICES) - 1


class BSIError(Exception):
    pass


class DuplicatePositionError(BSIError, ValueError):
    pass


class BSIOverflowError(BSIError, OverflowError):
    pass


class BSIUnderflowError(BSIError, ArithmeticError):
    def __init__(self, count: int):
        super().__init__(f"subtraction underflows at {count} position(s)")
        self.count = count


class NotBinaryError(BSIError, ValueError):
    pass


class EmptyBSIError(BSIError, ValueError):
    pass


class CompareOp(str, enum.Enum):
    LT = "LT"
    GT = "GT"
    LE = "LE"
    GE = "GE"
    EQ = "EQ"
    NE = "NE"


class Mode(str, enum.Enum):
    STRICT = "strict"
    TOTAL = "total"


class AggKind(str, enum.Enum):
    SUM = "sumBSI"
    MAX = "maxBSI"
    MUL = "mulBSI"
    DISTINCT = "distinctPos"


class BSI:
    """Immutable bit-sliced index; ``slices[0]`` is the lowest-order bit."""

    __slots__ = ("_slices", "_nz")

    def __init__(self, slices: Iterable[Bitmap] = ()) -> None:
        slices = list(slices)
        while slices and not slices[-1]:
            slices.pop()
        if len(slices) > MAX_SLICES:
            raise BSIOverflowError(f"{len(slices)} slices exceed the {MAX_SLICES}-bit limit")
        self._slices: tuple[Bitmap, ...] = tuple(slices)
        self._nz: Bitmap | None = None

    @classmethod
    def binary(cls, bitmap: Bitmap) -> "BSI":
        """Binary BSI with value 1 on every position of ``bitmap``."""
        out = cls((bitmap,))
        out._nz = bitmap
        return out

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "BSI":
        pairs = list(pairs)
        if not pairs:
            return EMPTY_BSI
        positions = [p for p, _ in pairs]
        values = [v for _, v in pairs]
        for v in values:
            if v < 0:
                raise ValueError("BSI values must be non-negative")
            if v > MAX_VALUE:
                raise BSIOverflowError(f"value {v} does not fit in {MAX_SLICES} bits")
        return cls.from_arrays(
            np.asarray(positions, dtype=np.int64), np.asarray(values, dtype=np.uint64)
        )

    @classmethod
    def from_arrays(cls, positions: np.ndarray, values: np.ndarray) -> "BSI":
        """Build from parallel arrays; zero values are simply absent."""
        positions = np.asarray(positions)
        values = np.asarray(values, dtype=np.uint64)
        if positions.shape != values.shape:
            raise ValueError("positions and values must have equal length")
        if positions.size == 0:
            return EMPTY_BSI
        if positions.min() < 0 or positions.max() >= 1 << 32:
            raise ValueError("positions must lie in [0, 2**32)")
        order = np.argsort(positions, kind="stable")
        positions = positions[order].astype(np.uint32)
        values = values[order]
        dup = positions[1:] == positions[:-1]
        if dup.any():
            first = int(positions[1:][dup][0])
            raise DuplicatePositionError(f"position {first} appears more than once")
        keep = values != 0
        positions, values = positions[keep], values[keep]
        if values.size == 0:
            return EMPTY_BSI
        width = int(values.max()).bit_length()
        slices = []
        for i in range(width):
            bit = ((values >> np.uint64(i)) & np.uint64(1)).astype(bool)
            slices.append(Bitmap.from_sorted(positions[bit]))
        return cls(slices)

    # -- accessors ----------------------------------------------------------

    @property
    def slices(self) -> tuple[Bitmap, ...]:
        return self._slices

    @property
    def width(self) -> int:
        return len(self._slices)

    @property
    def is_binary(self) -> bool:
        return len(self._slices) <= 1

    def slice(self, i: int) -> Bitmap:
        return self._slices[i] if i < len(self._slices) else EMPTY

    def get(self, position: int) -> int:
        value = 0
        for i, s in enumerate(self._slices):
            if position in s:
                value |= 1 << i
        return value

    def nonzero(self) -> Bitmap:
        if self._nz is None:
            self._nz = union_all(self._slices)
        return self._nz

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending positions and their values (present rows only)."""
        positions = self.nonzero().to_array()
        values = np.zeros(positions.size, dtype=np.uint64)
        for i, s in enumerate(self._slices):
            # every slice is a subset of the nonzero positions
            values[positions.searchsorted(s.to_array())] |= np.uint64(1) << np.uint64(i)
        return positions, values

    def to_dict(self) -> dict[int, int]:
        positions, values = self.to_arrays()
        return dict(zip(positions.tolist(), values.tolist()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BSI):
            return NotImplemented
        return self._slices == other._slices

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        n = self.count()
        if n <= 8:
            return f"BSI({self.to_dict()})"
        return f"BSI(<{n} values, {self.width} slices>)"

    @property
    def nbytes(self) -> int:
        return sum(s.nbytes for s in self._slices)

    # -- aggregates over one BSI --------------------------------------------

    def sum(self) -> int:
        return sum(s.cardinality << i for i, s in enumerate(self._slices))

    def count(self) -> int:
        return self.nonzero().cardinality

    def max(self) -> int:
        candidates = self.nonzero()
        if not candidates:
            raise EmptyBSIError("max() of empty BSI")
        result = 0
        for i in range(self.width - 1, -1, -1):
            hit = candidates & self._slices[i]
            if hit:
                candidates = hit
                result |= 1 << i
        return result

    def min(self) -> int:
        candidates = self.nonzero()
        if not candidates:
            raise EmptyBSIError("min() of empty BSI")
        result = 0
        for i in range(self.width - 1, -1, -1):
            miss = candidates.andnot(self._slices[i])
            if miss:
                candidates = miss
            else:
                result |= 1 << i
        return result

    # -- operators ----------------------------------------------------------

    def __add__(self, other: "BSI") -> "BSI":
        return add(self, other)

    def __sub__(self, other: "BSI") -> "BSI":
        return subtract(self, other)

    def __mul__(self, other: "BSI") -> "BSI":
        return multiply(self, other)

    # -- serialization --------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [struct.pack("<B", self.width)]
        for s in self._slices:
            payload = s.to_bytes()
            out.append(struct.pack("<I", len(payload)))
            out.append(payload)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BSI":
        bsi, end = cls.read_from(data, 0)
        if end != len(data):
            raise BitmapFormatError(f"{len(data) - end} trailing bytes after BSI")
        return bsi

    @classmethod
    def read_from(cls, data: bytes | memoryview, offset: int) -> tuple["BSI", int]:
        view = memoryview(data)
        if len(view) - offset < 1:
            raise TruncatedPayloadError("missing BSI slice count")
        (count,) = struct.unpack_from("<B", view, offset)
        if count > MAX_SLICES:
            raise BitmapFormatError(f"slice count {count} exceeds {MAX_SLICES}")
        pos = offset + 1
        slices = []
        for _ in range(count):
            if len(view) - pos < 4:
                raise TruncatedPayloadError("missing slice length prefix")
            (length,) = struct.unpack_from("<I", view, pos)
            pos += 4
            if len(view) - pos < length:
                raise TruncatedPayloadError("truncated slice payload")
            bm, end = Bitmap.read_from(view[: pos + length], pos)
            if end != pos + length:
                raise BitmapFormatError("slice length prefix disagrees with payload")
            slices.append(bm)
            pos = end
        if slices and not slices[-1]:
            raise BitmapFormatError("highest slice is empty")
        return cls(slices), pos


EMPTY_BSI = BSI()


# ---------------------------------------------------------------------------
# element-wise arithmetic

def _add_slices(xs: Sequence[Bitmap], ys: Sequence[Bitmap], shift: int = 0) -> list[Bitmap]:
    """Ripple-carry ``xs + (ys << shift)``; slices below ``shift`` pass through."""
    out = list(xs[:shift])
    out += [EMPTY] * (shift - len(out))
    carry = EMPTY
    for i in range(shift, max(len(xs), shift + len(ys))):
        a = xs[i] if i < len(xs) else EMPTY
        b = ys[i - shift] if i - shift < len(ys) else EMPTY
        half = a ^ b
        out.append(half ^ carry)
        carry = (a & b) | (half & carry)
    if carry:
        if len(out) == MAX_SLICES:
            raise BSIOverflowError(f"sum overflows {MAX_SLICES} bits at {len(carry)} position(s)")
        out.append(carry)
    return out


def add(x: BSI, y: BSI) -> BSI:
    if not y.width:
        return x
    if not x.width:
        return y
    return BSI(_add_slices(x.slices, y.slices))


def subtract(x: BSI, y: BSI) -> BSI:
    """``x - y``; raises BSIUnderflowError if any ``y(j) > x(j)``."""
    if not y.width:
        return x
    out = []
    borrow = EMPTY
    for i in range(max(x.width, y.width)):
        a, b = x.slice(i), y.slice(i)
        half = a ^ b
        out.append(half ^ borrow)
        borrow = b.andnot(a) | borrow.andnot(half)
    if borrow:
        raise BSIUnderflowError(len(borrow))
    return BSI(out)


def multiply_binary(x: BSI, mask: BSI) -> BSI:
    if not mask.is_binary:
        raise NotBinaryError(f"mask has {mask.width} slices, expected at most 1")
    if not mask.width:
        return EMPTY_BSI
    m = mask.slice(0)
    return BSI(s & m for s in x.slices)


def multiply(x: BSI, y: BSI) -> BSI:
    """General product by shift-and-add over the slices of ``y``."""
    if y.width > x.width:
        x, y = y, x
    acc: list[Bitmap] = []
    for i, yi in enumerate(y.slices):
        if not yi:
            continue
        partial = [s & yi for s in x.slices]
        while partial and not partial[-1]:
            partial.pop()
        if not partial:
            continue
        if i + len(partial) > MAX_SLICES:
            raise BSIOverflowError(f"product overflows {MAX_SLICES} bits")
        acc = _add_slices(acc, partial, i)
    return BSI(acc)


def add_scalar(x: BSI, k: int) -> BSI:
    """Add ``k`` to every present value; absent rows stay absent."""
    if k < 0:
        raise ValueError("scalar must be non-negative")
    if k == 0 or not x.width:
        return x
    if k > MAX_VALUE:
        raise BSIOverflowError(f"scalar {k} does not fit in {MAX_SLICES} bits")
    nz = x.nonzero()
    const = BSI(nz if (k >> i) & 1 else EMPTY for i in range(k.bit_length()))
    return add(x, const)


# ---------------------------------------------------------------------------
# comparisons

def _less_than(x: BSI, y: BSI) -> Bitmap:
    # L = [(Y^i OR L) ANDNOT X^i] OR (Y^i AND L), scanned from the low slice up.
    lt = EMPTY
    for i in range(max(x.width, y.width)):
        xi, yi = x.slice(i), y.slice(i)
        lt = (yi | lt).andnot(xi) | (yi & lt)
    return lt


def _equal(x: BSI, y: BSI) -> Bitmap:
    eq = x.nonzero()
    for i in range(max(x.width, y.width)):
        eq = eq.andnot(x.slice(i) ^ y.slice(i))
    return eq


def _differ(x: BSI, y: BSI) -> Bitmap:
    ne = EMPTY
    for i in range(max(x.width, y.width)):
        ne = ne | (x.slice(i) ^ y.slice(i))
    return ne


def compare(x: BSI, y: BSI, op: CompareOp | str, mode: Mode | str = Mode.STRICT) -> BSI:
    """Row-wise comparison producing a binary BSI.

    Strict mode only reports rows where both operands are present.  Total
    mode treats absence as the value 0 but still never marks rows that are
    absent on both sides.
    """
    op = CompareOp(op)
    mode = Mode(mode)
    if op is CompareOp.GT:
        return compare(y, x, CompareOp.LT, mode)
    if op is CompareOp.GE:
        return compare(y, x, CompareOp.LE, mode)
    if op is CompareOp.EQ:
        # rows present on only one side always differ in some slice
        return BSI.binary(_equal(x, y))
    if op is CompareOp.LT:
        lt = _less_than(x, y)
        if mode is Mode.STRICT:
            lt = lt & x.nonzero()
        return BSI.binary(lt)
    if op is CompareOp.LE:
        # rows in scope minus those where y < x
        if mode is Mode.STRICT:
            scope = x.nonzero() & y.nonzero()
        else:
            scope = x.nonzero() | y.nonzero()
        return BSI.binary(scope.andnot(_less_than(y, x)))
    ne = _differ(x, y)
    if mode is Mode.STRICT:
        ne = ne & x.nonzero() & y.nonzero()
    return BSI.binary(ne)


def compare_scalar(x: BSI, op: CompareOp | str, k: int) -> BSI:
    """Compare present values with a constant; absent rows never match."""
    op = CompareOp(op)
    if k < 0:
        raise ValueError("scalar must be non-negative")
    eq = x.nonzero()
    lt = EMPTY
    gt = EMPTY
    for i in range(max(x.width, k.bit_length()) - 1, -1, -1):
        if not eq:
            break
        xi = x.slice(i)
        if (k >> i) & 1:
            lt = lt | eq.andnot(xi)
            eq = eq & xi
        else:
            gt = gt | (eq & xi)
            eq = eq.andnot(xi)
    result = {
        CompareOp.EQ: lambda: eq,
        CompareOp.NE: lambda: lt | gt,
        CompareOp.LT: lambda: lt,
        CompareOp.LE: lambda: lt | eq,
        CompareOp.GT: lambda: gt,
        CompareOp.GE: lambda: gt | eq,
    }[op]()
    return BSI.binary(result)


# ---------------------------------------------------------------------------
# aggregates over several BSIs

def _max_pair(x: BSI, y: BSI) -> BSI:
    # every present row goes to exactly one side, so the halves can be OR-ed
    x_wins = compare(x, y, CompareOp.GT, Mode.TOTAL).slice(0)
    y_wins = (x.nonzero() | y.nonzero()).andnot(x_wins)
    return BSI((x.slice(i) & x_wins) | (y.slice(i) & y_wins) for i in range(max(x.width, y.width)))


def _distinct_pair(x: BSI, y: BSI) -> BSI:
    return BSI.binary(x.nonzero() | y.nonzero())


_PAIRWISE = {
    AggKind.SUM: add,
    AggKind.MAX: _max_pair,
    AggKind.MUL: multiply,
    AggKind.DISTINCT: _distinct_pair,
}


def combine(kind: AggKind | str, x: BSI, y: BSI) -> BSI:
    return _PAIRWISE[AggKind(kind)](x, y)


def aggregate(kind: AggKind | str, inputs: Sequence[BSI]) -> BSI:
    """Left fold of the pairwise aggregate over ``inputs``."""
    kind = AggKind(kind)
    if not inputs:
        raise ValueError("aggregate needs at least one input")
    if kind is AggKind.DISTINCT:
        return BSI.binary(union_all(b.nonzero() for b in inputs))
    return reduce(_PAIRWISE[kind], inputs)
