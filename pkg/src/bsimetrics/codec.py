"""Conversion between row format ``(position, value)`` and BSI format.

Two encoders (straightforward bit extraction, and block-wise encoding of
position-sorted rows) and two decoders (row-at-a-time gathering, and
per-bitmap extraction container by container) are provided.  Each pair
produces identical output; they differ only in access pattern.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitmap import Bitmap, _bit_test, _c_values, is_bitset
from .bsi import BSI, EMPTY_BSI, DuplicatePositionError

ROW_DTYPE = np.dtype([("position", "<u4"), ("value", "<u8")])


class CodecError(ValueError):
    pass


class UnsortedRowsError(CodecError):
    pass


class ZeroValueError(CodecError):
    pass


@dataclass
class NormalRows:
    positions: np.ndarray
    values: np.ndarray
    sorted: bool = False

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.uint32)
        self.values = np.asarray(self.values, dtype=np.uint64)
        if self.positions.shape != self.values.shape:
            raise CodecError("positions and values differ in length")

    def __len__(self) -> int:
        return int(self.positions.size)

    @classmethod
    def from_pairs(cls, pairs, sorted: bool = False) -> "NormalRows":
        pairs = list(pairs)
        return cls(
            np.array([p for p, _ in pairs], dtype=np.uint32),
            np.array([v for _, v in pairs], dtype=np.uint64),
            sorted=sorted,
        )

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.positions.tolist(), self.values.tolist()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NormalRows):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(
            self.values, other.values
        )

    @property
    def nbytes(self) -> int:
        """Uncompressed record size: u32 position + u64 value per row."""
        return len(self) * ROW_DTYPE.itemsize

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=ROW_DTYPE)
        rec["position"] = self.positions
        rec["value"] = self.values
        return rec


def write_rows(rows: NormalRows, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(f"sorted={int(rows.sorted)}\n".encode("ascii"))
        fh.write(rows.to_records().tobytes())


def read_rows(path: str | Path) -> NormalRows:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    header = data[:nl].decode("ascii") if nl >= 0 else ""
    if header not in ("sorted=0", "sorted=1"):
        raise CodecError(f"bad row file header {header!r}")
    body = data[nl + 1 :]
    if len(body) % ROW_DTYPE.itemsize:
        raise CodecError("row file length is not a whole number of records")
    rec = np.frombuffer(body, dtype=ROW_DTYPE)
    return NormalRows(rec["position"].copy(), rec["value"].copy(), sorted=header == "sorted=1")


def _validate(rows: NormalRows) -> None:
    if np.any(rows.values == 0):
        raise ZeroValueError("zero-valued rows are not representable (zero means absent)")


def encode_straightforward(rows: NormalRows) -> BSI:
    """Extract each bit of every value and set it in that bit's bitmap."""
    _validate(rows)
    if not len(rows):
        return EMPTY_BSI
    uniq = np.unique(rows.positions)
    if uniq.size != len(rows):
        raise DuplicatePositionError("duplicate positions in rows")
    width = int(rows.values.max()).bit_length()
    slices = []
    for i in range(width):
        bit = ((rows.values >> np.uint64(i)) & np.uint64(1)).astype(bool)
        slices.append(Bitmap.from_positions(rows.positions[bit]))
    return BSI(slices)


def encode_presorted(rows: NormalRows) -> BSI:
    """Encode position-sorted rows one 65536-position block at a time.

    Every bit extracted from a block lands in the same container key of each
    slice, so slices are assembled container by container without sorting.
    """
    positions = rows.positions
    if not rows.sorted:
        raise UnsortedRowsError("encode_presorted requires the sorted flag")
    if positions.size > 1 and not np.all(positions[1:] > positions[:-1]):
        raise UnsortedRowsError("positions are not strictly increasing")
    _validate(rows)
    if not len(rows):
        return EMPTY_BSI
    width = int(rows.values.max()).bit_length()
    highs = positions >> 16
    cuts = np.flatnonzero(highs[1:] != highs[:-1]) + 1
    bounds = np.concatenate(([0], cuts, [positions.size])).tolist()
    per_slice: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(width)]
    for s, e in zip(bounds[:-1], bounds[1:]):
        key = int(highs[s])
        lows = (positions[s:e] & 0xFFFF).astype(np.uint16)
        vals = rows.values[s:e]
        for i in range(width):
            bit = ((vals >> np.uint64(i)) & np.uint64(1)).astype(bool)
            per_slice[i].append((key, lows[bit]))
    return BSI(Bitmap.from_containers(items) for items in per_slice)


def decode_straightforward(x: BSI, mask: Bitmap) -> NormalRows:
    """Gather every slice's bit for each masked position, one row at a time."""
    slices = x.slices
    out_pos: list[int] = []
    out_val: list[int] = []
    for p in mask:
        v = 0
        for i, s in enumerate(slices):
            if p in s:
                v |= 1 << i
        if v:
            out_pos.append(p)
            out_val.append(v)
    return NormalRows(
        np.array(out_pos, dtype=np.uint32), np.array(out_val, dtype=np.uint64), sorted=True
    )


def decode_per_bitmap(x: BSI, mask: Bitmap) -> NormalRows:
    """Decode container by container, depositing each slice's masked bits.

    For one mask container, a value buffer is zeroed; each slice's container
    at the same key contributes its masked bits to bit ``i`` of the buffer.
    Slices without a container at that key are skipped.
    """
    out_pos = []
    out_val = []
    for key, mc in mask.containers():
        lows = _c_values(mc)
        buf = np.zeros(lows.size, dtype=np.uint64)
        for i, s in enumerate(x.slices):
            c = s.container(key)
            if c is None:
                continue
            hit = _bit_test(c, lows) if is_bitset(c) else _sparse_hit(c, lows)
            buf |= hit.astype(np.uint64) << np.uint64(i)
        keep = buf != 0
        if keep.any():
            out_pos.append((np.uint32(key) << np.uint32(16)) | lows[keep].astype(np.uint32))
            out_val.append(buf[keep])
    if not out_pos:
        return NormalRows(np.empty(0, np.uint32), np.empty(0, np.uint64), sorted=True)
    return NormalRows(np.concatenate(out_pos), np.concatenate(out_val), sorted=True)


def _sparse_hit(c: np.ndarray, lows: np.ndarray) -> np.ndarray:
    hit = np.zeros(lows.size, dtype=bool)
    idx = np.searchsorted(lows, c)
    ok = idx < lows.size
    idx, vals = idx[ok], c[ok]
    hit[idx[lows[idx] == vals]] = True
    return hit
