"""Two-level compressed bitmap over unsigned 32-bit positions.

Positions are split into a 16-bit key (high half) and a 16-bit low value.
Each key owns one container: a sorted ``uint16`` array while it holds at
most 4096 values, and a 1024-word ``uint64`` bitset above that.  The kind of
a container is carried by its dtype, so a container is just a numpy array.

Bitmaps are immutable once built; every operation returns a new bitmap
whose containers are normalized to the kind matching their cardinality.
"""

from __future__ import annotations

import bisect
import struct
from typing import Iterable, Iterator

import numpy as np

ARRAY_MAX = 4096
BITSET_WORDS = 1024
CONTAINER_SPAN = 1 << 16
MAX_POSITION = (1 << 32) - 1

MAGIC = 0x42534D31
FORMAT_VERSION = 1
KIND_ARRAY = 0
KIND_BITSET = 1

_HEADER = struct.Struct("<IBH")
_ENTRY = struct.Struct("<HBH")
_BITSET_BYTES = BITSET_WORDS * 8

_U16 = np.dtype("<u2")
_U64 = np.dtype("<u8")
_ONE = np.uint64(1)
_LOW6 = np.uint16(63)


class BitmapFormatError(ValueError):
    """Serialized bitmap bytes could not be parsed."""


class BadMagicError(BitmapFormatError):
    pass


class UnsupportedVersionError(BitmapFormatError):
    pass


class TruncatedPayloadError(BitmapFormatError):
    pass


class UnsortedKeysError(BitmapFormatError):
    pass


class CorruptContainerError(BitmapFormatError):
    pass


# ---------------------------------------------------------------------------
# container kernels

def is_bitset(c: np.ndarray) -> bool:
    return c.dtype == _U64


def container_kind(c: np.ndarray) -> str:
    return "bitset" if c.dtype == _U64 else "array"


def _popcount(words: np.ndarray) -> int:
    return int(np.bitwise_count(words).sum())


def _to_bitset(values: np.ndarray) -> np.ndarray:
    bits = np.zeros(CONTAINER_SPAN, dtype=bool)
    bits[values] = True
    return np.packbits(bits, bitorder="little").view(_U64)


def _to_array(words: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")
    return np.flatnonzero(bits).astype(_U16)


def _bit_test(words: np.ndarray, values: np.ndarray) -> np.ndarray:
    shifted = words[values >> 6] >> (values & _LOW6).astype(_U64)
    return (shifted & _ONE).astype(bool)


def _array_member(haystack: np.ndarray, needles: np.ndarray) -> np.ndarray:
    # both sorted unique; returns mask over needles
    return haystack.take(haystack.searchsorted(needles), mode="clip") == needles


def _normalize(c: np.ndarray, card: int) -> np.ndarray:
    if c.dtype == _U64:
        return _to_array(c) if card <= ARRAY_MAX else c
    return _to_bitset(c) if card > ARRAY_MAX else c


def _member(c: np.ndarray, values: np.ndarray) -> np.ndarray:
    if c.dtype == _U64:
        return _bit_test(c, values)
    return _array_member(c, values)


def _c_and(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype == _U64 and b.dtype == _U64:
        w = a & b
        return _normalize(w, _popcount(w))
    if a.dtype == _U64:
        a, b = b, a
    return a[_member(b, a)]


def _c_and_card(a: np.ndarray, b: np.ndarray) -> int:
    if a.dtype == _U64 and b.dtype == _U64:
        return _popcount(a & b)
    if a.dtype == _U64:
        a, b = b, a
    return int(np.count_nonzero(_member(b, a)))


def _set_bits(words: np.ndarray, values: np.ndarray, ufunc) -> np.ndarray:
    out = words.copy()
    ufunc.at(out, values >> 6, _ONE << (values & _LOW6).astype(_U64))
    return out


def _sorted_concat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    merged = np.concatenate((a, b))
    merged.sort()
    return merged


def _c_or(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype == _U64 and b.dtype == _U64:
        return a | b
    if a.dtype == _U64:
        return _set_bits(a, b, np.bitwise_or)
    if b.dtype == _U64:
        return _set_bits(b, a, np.bitwise_or)
    merged = _sorted_concat(a, b)
    if merged.size > 1:
        keep = np.empty(merged.size, dtype=bool)
        keep[0] = True
        np.not_equal(merged[1:], merged[:-1], out=keep[1:])
        merged = merged[keep]
    return _to_bitset(merged) if merged.size > ARRAY_MAX else merged


def _c_xor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype == _U64 and b.dtype == _U64:
        w = a ^ b
    elif a.dtype == _U64:
        w = _set_bits(a, b, np.bitwise_xor)
    elif b.dtype == _U64:
        w = _set_bits(b, a, np.bitwise_xor)
    else:
        merged = _sorted_concat(a, b)
        if merged.size > 1:
            # keep values that differ from both neighbours
            edge = np.empty(merged.size + 1, dtype=bool)
            edge[0] = edge[-1] = True
            np.not_equal(merged[1:], merged[:-1], out=edge[1:-1])
            merged = merged[edge[1:] & edge[:-1]]
        return _to_bitset(merged) if merged.size > ARRAY_MAX else merged
    return _normalize(w, _popcount(w))


def _c_andnot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype == _U64 and b.dtype == _U64:
        w = a & ~b
        return _normalize(w, _popcount(w))
    if a.dtype == _U64:
        w = a.copy()
        np.bitwise_and.at(w, b >> 6, ~(_ONE << (b & _LOW6).astype(_U64)))
        return _normalize(w, _popcount(w))
    return a[~_member(b, a)]


def _c_card(c: np.ndarray) -> int:
    return _popcount(c) if c.dtype == _U64 else int(c.size)


def _c_values(c: np.ndarray) -> np.ndarray:
    return _to_array(c) if c.dtype == _U64 else c


# ---------------------------------------------------------------------------
# bitmap

class Bitmap:
    """Immutable set of 32-bit positions stored as keyed containers."""

    __slots__ = ("_keys", "_containers", "_cards")

    def __init__(self) -> None:
        self._keys: list[int] = []
        self._containers: list[np.ndarray] = []
        self._cards: list[int] = []

    @classmethod
    def _single(cls, key: int, c: np.ndarray) -> "Bitmap":
        n = _c_card(c)
        return cls._from_parts([key], [c], [n]) if n else EMPTY

    @classmethod
    def _from_parts(cls, keys, containers, cards) -> "Bitmap":
        bm = cls.__new__(cls)
        bm._keys = keys
        bm._containers = containers
        bm._cards = cards
        return bm

    # -- construction ------------------------------------------------------

    @classmethod
    def from_sorted(cls, positions: np.ndarray) -> "Bitmap":
        """Build from a strictly increasing position array (no copy of checks)."""
        positions = np.asarray(positions, dtype=np.uint32)
        if positions.size == 0:
            return cls()
        highs = positions >> 16
        cuts = np.flatnonzero(highs[1:] != highs[:-1]) + 1
        starts = np.concatenate(([0], cuts))
        ends = np.concatenate((cuts, [positions.size]))
        lows = (positions & 0xFFFF).astype(_U16)
        keys, containers, cards = [], [], []
        for s, e in zip(starts.tolist(), ends.tolist()):
            chunk = lows[s:e]
            n = e - s
            keys.append(int(highs[s]))
            containers.append(_to_bitset(chunk) if n > ARRAY_MAX else chunk.copy())
            cards.append(n)
        return cls._from_parts(keys, containers, cards)

    @classmethod
    def from_positions(cls, positions: Iterable[int] | np.ndarray) -> "Bitmap":
        """Build from positions in any order; duplicates are collapsed."""
        if not isinstance(positions, np.ndarray):
            positions = np.fromiter(positions, dtype=np.int64)
        if positions.size and (positions.min() < 0 or positions.max() > MAX_POSITION):
            raise ValueError("positions must lie in [0, 2**32)")
        return cls.from_sorted(np.unique(positions.astype(np.uint32)))

    @classmethod
    def from_containers(cls, items: Iterable[tuple[int, np.ndarray]]) -> "Bitmap":
        """Assemble from ``(key, sorted uint16 values)`` pairs in ascending key order."""
        keys, containers, cards = [], [], []
        prev = -1
        for key, values in items:
            if key <= prev:
                raise ValueError("container keys must be strictly increasing")
            values = np.asarray(values, dtype=_U16)
            if values.size == 0:
                continue
            prev = key
            keys.append(int(key))
            containers.append(_to_bitset(values) if values.size > ARRAY_MAX else values)
            cards.append(int(values.size))
        return cls._from_parts(keys, containers, cards)

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        return sum(self._cards)

    @property
    def cardinality(self) -> int:
        return sum(self._cards)

    def __bool__(self) -> bool:
        return bool(self._keys)

    def __contains__(self, position: int) -> bool:
        key = position >> 16
        i = bisect.bisect_left(self._keys, key)
        if i == len(self._keys) or self._keys[i] != key:
            return False
        c = self._containers[i]
        low = position & 0xFFFF
        if c.dtype == _U64:
            return bool((int(c[low >> 6]) >> (low & 63)) & 1)
        j = int(c.searchsorted(low))
        return j < c.size and int(c[j]) == low

    def contains_many(self, positions: np.ndarray) -> np.ndarray:
        """Vectorized membership test for an arbitrary position array."""
        positions = np.asarray(positions, dtype=np.uint32)
        out = np.zeros(positions.size, dtype=bool)
        if not self._keys or positions.size == 0:
            return out
        highs = positions >> 16
        lows = (positions & 0xFFFF).astype(_U16)
        for key, c in zip(self._keys, self._containers):
            sel = np.flatnonzero(highs == key)
            if sel.size:
                out[sel] = _member(c, lows[sel])
        return out

    def __iter__(self) -> Iterator[int]:
        for key, c in zip(self._keys, self._containers):
            base = key << 16
            for low in _c_values(c).tolist():
                yield base | low

    def to_array(self) -> np.ndarray:
        if not self._keys:
            return np.empty(0, dtype=np.uint32)
        parts = [
            (np.uint32(key) << np.uint32(16)) | _c_values(c).astype(np.uint32)
            for key, c in zip(self._keys, self._containers)
        ]
        return np.concatenate(parts)

    def keys(self) -> list[int]:
        return list(self._keys)

    def container(self, key: int) -> np.ndarray | None:
        """Raw container for ``key`` (array or bitset), or None."""
        i = bisect.bisect_left(self._keys, key)
        if i < len(self._keys) and self._keys[i] == key:
            return self._containers[i]
        return None

    def containers(self) -> Iterator[tuple[int, np.ndarray]]:
        return zip(self._keys, self._containers)

    def container_stats(self) -> list[tuple[int, str, int]]:
        return [
            (k, container_kind(c), n)
            for k, c, n in zip(self._keys, self._containers, self._cards)
        ]

    def min(self) -> int:
        if not self._keys:
            raise ValueError("min() of empty bitmap")
        return (self._keys[0] << 16) | int(_c_values(self._containers[0])[0])

    def max(self) -> int:
        if not self._keys:
            raise ValueError("max() of empty bitmap")
        return (self._keys[-1] << 16) | int(_c_values(self._containers[-1])[-1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bitmap):
            return NotImplemented
        if self._keys != other._keys or self._cards != other._cards:
            return False
        return all(
            a.dtype == b.dtype and np.array_equal(a, b)
            for a, b in zip(self._containers, other._containers)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        n = self.cardinality
        if n <= 8:
            return f"Bitmap({list(self)})"
        return f"Bitmap(<{n} positions in {len(self._keys)} containers>)"

    @property
    def nbytes(self) -> int:
        """In-memory payload size of all containers."""
        return sum(c.nbytes for c in self._containers)

    # -- mutation-free updates ----------------------------------------------

    def add(self, position: int) -> "Bitmap":
        """Return a bitmap that also contains ``position``."""
        if not 0 <= position <= MAX_POSITION:
            raise ValueError("position out of range")
        if position in self:
            return self
        return self | Bitmap.from_sorted(np.array([position], dtype=np.uint32))

    # -- set algebra --------------------------------------------------------

    def __and__(self, other: "Bitmap") -> "Bitmap":
        ka, kb = self._keys, other._keys
        ca, cb = self._containers, other._containers
        if len(ka) == 1 and len(kb) == 1:
            return Bitmap._single(ka[0], _c_and(ca[0], cb[0])) if ka[0] == kb[0] else EMPTY
        keys, containers, cards = [], [], []
        i = j = 0
        while i < len(ka) and j < len(kb):
            if ka[i] < kb[j]:
                i += 1
            elif ka[i] > kb[j]:
                j += 1
            else:
                c = _c_and(ca[i], cb[j])
                n = _c_card(c)
                if n:
                    keys.append(ka[i])
                    containers.append(c)
                    cards.append(n)
                i += 1
                j += 1
        return Bitmap._from_parts(keys, containers, cards)

    def intersection_cardinality(self, other: "Bitmap") -> int:
        ka, kb = self._keys, other._keys
        total = 0
        i = j = 0
        while i < len(ka) and j < len(kb):
            if ka[i] < kb[j]:
                i += 1
            elif ka[i] > kb[j]:
                j += 1
            else:
                total += _c_and_card(self._containers[i], other._containers[j])
                i += 1
                j += 1
        return total

    def _merge(self, other: "Bitmap", kernel, keep_right: bool) -> "Bitmap":
        ka, kb = self._keys, other._keys
        ca, cb = self._containers, other._containers
        na, nb = self._cards, other._cards
        if len(ka) == 1 and len(kb) == 1 and ka[0] == kb[0]:
            return Bitmap._single(ka[0], kernel(ca[0], cb[0]))
        keys, containers, cards = [], [], []
        i = j = 0
        while i < len(ka) and j < len(kb):
            if ka[i] < kb[j]:
                keys.append(ka[i])
                containers.append(ca[i])
                cards.append(na[i])
                i += 1
            elif ka[i] > kb[j]:
                if keep_right:
                    keys.append(kb[j])
                    containers.append(cb[j])
                    cards.append(nb[j])
                j += 1
            else:
                c = kernel(ca[i], cb[j])
                n = _c_card(c)
                if n:
                    keys.append(ka[i])
                    containers.append(c)
                    cards.append(n)
                i += 1
                j += 1
        keys += ka[i:]
        containers += ca[i:]
        cards += na[i:]
        if keep_right:
            keys += kb[j:]
            containers += cb[j:]
            cards += nb[j:]
        return Bitmap._from_parts(keys, containers, cards)

    def __or__(self, other: "Bitmap") -> "Bitmap":
        if not other._keys:
            return self
        if not self._keys:
            return other
        return self._merge(other, _c_or, keep_right=True)

    def __xor__(self, other: "Bitmap") -> "Bitmap":
        if not other._keys:
            return self
        if not self._keys:
            return other
        return self._merge(other, _c_xor, keep_right=True)

    def andnot(self, other: "Bitmap") -> "Bitmap":
        if not other._keys or not self._keys:
            return self
        return self._merge(other, _c_andnot, keep_right=False)

    __sub__ = andnot

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        if len(self._keys) > 0xFFFF:
            raise OverflowError("entry count does not fit the u16 header field")
        out = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(self._keys))]
        for key, c, n in zip(self._keys, self._containers, self._cards):
            if c.dtype == _U64:
                out.append(_ENTRY.pack(key, KIND_BITSET, n - 1))
                out.append(c.astype(_U64, copy=False).tobytes())
            else:
                out.append(_ENTRY.pack(key, KIND_ARRAY, n - 1))
                out.append(c.astype(_U16, copy=False).tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitmap":
        bm, end = cls.read_from(data, 0)
        if end != len(data):
            raise CorruptContainerError(f"{len(data) - end} trailing bytes after bitmap")
        return bm

    @classmethod
    def read_from(cls, data: bytes | memoryview, offset: int) -> tuple["Bitmap", int]:
        """Parse one bitmap starting at ``offset``; return it and the end offset."""
        view = memoryview(data)
        if len(view) - offset < _HEADER.size:
            raise TruncatedPayloadError("buffer shorter than bitmap header")
        magic, version, count = _HEADER.unpack_from(view, offset)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic 0x{magic:08X}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"unsupported bitmap format version {version}")
        pos = offset + _HEADER.size
        keys, containers, cards = [], [], []
        prev = -1
        for _ in range(count):
            if len(view) - pos < _ENTRY.size:
                raise TruncatedPayloadError("truncated container header")
            key, kind, card_m1 = _ENTRY.unpack_from(view, pos)
            pos += _ENTRY.size
            card = card_m1 + 1
            if key <= prev:
                raise UnsortedKeysError(f"key {key} follows key {prev}")
            prev = key
            if kind == KIND_ARRAY:
                size = card * 2
                if len(view) - pos < size:
                    raise TruncatedPayloadError("truncated array container")
                c = np.frombuffer(view, dtype=_U16, count=card, offset=pos).copy()
                if card > ARRAY_MAX:
                    raise CorruptContainerError("array container above 4096 values")
                if card > 1 and not np.all(c[1:] > c[:-1]):
                    raise CorruptContainerError("array container not strictly increasing")
            elif kind == KIND_BITSET:
                size = _BITSET_BYTES
                if len(view) - pos < size:
                    raise TruncatedPayloadError("truncated bitset container")
                c = np.frombuffer(view, dtype=_U64, count=BITSET_WORDS, offset=pos).copy()
                if _popcount(c) != card:
                    raise CorruptContainerError("bitset cardinality mismatch")
                if card <= ARRAY_MAX:
                    raise CorruptContainerError("bitset container at or below 4096 values")
            else:
                raise CorruptContainerError(f"unknown container kind {kind}")
            pos += size
            keys.append(key)
            containers.append(c)
            cards.append(card)
        return cls._from_parts(keys, containers, cards), pos


EMPTY = Bitmap()


class BitmapBuilder:
    """Single-threaded accumulator for positions; call ``build`` once."""

    def __init__(self) -> None:
        self._chunks: list[np.ndarray] = []
        self._pending: list[int] = []

    def add(self, position: int) -> None:
        self._pending.append(position)

    def add_many(self, positions: np.ndarray) -> None:
        self._chunks.append(np.asarray(positions, dtype=np.int64))

    def build(self) -> Bitmap:
        parts = self._chunks + [np.asarray(self._pending, dtype=np.int64)]
        return Bitmap.from_positions(np.concatenate(parts))


def union_all(bitmaps: Iterable[Bitmap]) -> Bitmap:
    out = EMPTY
    for bm in bitmaps:
        out = out | bm
    return out
