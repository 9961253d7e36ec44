"""Experiment data model: hashing, position encoding and BSI table layouts.

Analysis units are hashed into segments, randomization units into buckets.
Within a segment every analysis unit receives a dense position, so all
tables of the same segment are joined simply by position.
"""

from __future__ import annotations

import datetime as dt
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from typing import Iterable, Iterator

import numpy as np

from .bsi import BSI, EMPTY_BSI

DEFAULT_SEGMENTS = 1024
DEFAULT_BUCKETS = 1024
SEGMENT_SALT = b""
BUCKET_SALT = b"\x01"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_EPOCH = dt.date(1970, 1, 1).toordinal()


class ModelError(ValueError):
    pass


class IngestError(ModelError):
    """A raw record was rejected; ``index`` is its 0-based position in the input."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index
        self.reason = message


class SegmentMismatchError(ModelError):
    pass


class UnknownStrategyError(KeyError):
    pass


class UnknownDimensionError(KeyError):
    pass


class MissingPartitionError(LookupError):
    def __init__(self, partitions: Iterable[str]):
        self.partitions = sorted(set(partitions))
        super().__init__("missing data partitions: " + ", ".join(self.partitions))


# ---------------------------------------------------------------------------
# hashing

def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def mix64(h: int) -> int:
    """64-bit finalizer; spreads entropy into the low bits used for ``%``."""
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _MASK64
    h ^= h >> 33
    return h


def unit_hash(unit_id: bytes, salt: bytes = b"") -> int:
    if not unit_id:
        raise ModelError("unit id must be non-empty")
    return mix64(fnv1a64(salt + unit_id))


# ---------------------------------------------------------------------------
# dates and fixed point

def parse_date(yyyymmdd: int | str) -> int:
    """Decimal ``YYYYMMDD`` to a day index counted from 1970-01-01."""
    s = str(yyyymmdd).strip()
    try:
        if len(s) != 8:
            raise ValueError
        d = dt.date(int(s[:4]), int(s[4:6]), int(s[6:]))
    except ValueError:
        raise ModelError(f"bad date {yyyymmdd!r}, expected YYYYMMDD") from None
    day = d.toordinal() - _EPOCH
    if day < 0:
        raise ModelError(f"date {s} is before 1970-01-01")
    return day


def format_date(day: int) -> int:
    d = dt.date.fromordinal(day + _EPOCH)
    return d.year * 10000 + d.month * 100 + d.day


def check_scale(scale: int) -> int:
    scale = int(scale)
    s = str(scale)
    if scale < 1 or s.rstrip("0") != "1":
        raise ModelError(f"scale must be a power of ten, got {scale}")
    return scale


def to_fixed_point(value, scale: int = 1) -> int:
    """``round(value * scale)`` with half-even rounding; rejects negatives."""
    if scale != 1:
        check_scale(scale)
    if type(value) is int:
        if value < 0:
            raise ModelError(f"negative value {value!r}")
        return value * scale
    try:
        d = Decimal(str(value).strip()) * scale
    except InvalidOperation:
        raise ModelError(f"not a number: {value!r}") from None
    if not d.is_finite():
        raise ModelError(f"not a finite number: {value!r}")
    if d < 0:
        raise ModelError(f"negative value {value!r}")
    return int(d.quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


# ---------------------------------------------------------------------------
# catalog

@dataclass
class DimensionSpec:
    categorical: bool = False
    scale: int = 1
    codes: dict[str, int] = field(default_factory=dict)

    def code_for(self, raw: str, create: bool = False) -> int | None:
        code = self.codes.get(raw)
        if code is None and create:
            code = len(self.codes) + 1
            self.codes[raw] = code
        return code


@dataclass
class Catalog:
    n_segments: int = DEFAULT_SEGMENTS
    n_buckets: int = DEFAULT_BUCKETS
    shared_bucketing: bool = False
    segment_salt: bytes = SEGMENT_SALT
    bucket_salt: bytes = BUCKET_SALT
    metric_scales: dict[str, int] = field(default_factory=dict)
    dimensions: dict[str, DimensionSpec] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_segments < 1 or self.n_buckets < 1:
            raise ModelError("segment and bucket counts must be positive")
        if self.shared_bucketing and self.n_buckets != self.n_segments:
            raise ModelError("shared bucketing needs equal segment and bucket counts")
        if self.segment_salt == self.bucket_salt and not self.shared_bucketing:
            raise ModelError("segment and bucket salts must differ")

    def segment_of(self, analysis_unit_id: bytes) -> int:
        return unit_hash(analysis_unit_id, self.segment_salt) % self.n_segments

    def bucket_of(self, randomization_unit_id: bytes) -> int:
        if self.shared_bucketing:
            return self.segment_of(randomization_unit_id)
        return unit_hash(randomization_unit_id, self.bucket_salt) % self.n_buckets

    def scale_of(self, metric: str) -> int:
        return self.metric_scales.get(metric, 1)


def segment_of(analysis_unit_id: bytes, n_segments: int = DEFAULT_SEGMENTS) -> int:
    return unit_hash(analysis_unit_id, SEGMENT_SALT) % n_segments


def bucket_of(randomization_unit_id: bytes, n_buckets: int = DEFAULT_BUCKETS) -> int:
    return unit_hash(randomization_unit_id, BUCKET_SALT) % n_buckets


# ---------------------------------------------------------------------------
# position encoding

class PositionEncoder:
    """Per-segment dense dictionary from analysis-unit id to position."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._maps: dict[int, dict[bytes, int]] = defaultdict(dict)
        self._index: dict[bytes, tuple[int, int]] = {}

    def encode(self, segment: int, unit_id: bytes) -> int:
        table = self._maps[segment]
        pos = table.get(unit_id)
        if pos is None:
            actual = self.catalog.segment_of(unit_id)
            if actual != segment:
                raise SegmentMismatchError(
                    f"unit {unit_id!r} hashes to segment {actual}, not {segment}"
                )
            pos = len(table)
            table[unit_id] = pos
            self._index[unit_id] = (segment, pos)
        return pos

    def encode_unit(self, unit_id: bytes) -> tuple[int, int]:
        """Hash ``unit_id`` to its segment and return ``(segment, position)``."""
        hit = self._index.get(unit_id)
        if hit is not None:
            return hit
        segment = self.catalog.segment_of(unit_id)
        table = self._maps[segment]
        pos = len(table)
        table[unit_id] = pos
        self._index[unit_id] = (segment, pos)
        return segment, pos

    def preregister(self, unit_ids: Iterable[bytes]) -> None:
        """Assign positions in the given (e.g. engagement) order before ingest."""
        for uid in unit_ids:
            self.encode_unit(uid)

    def lookup(self, segment: int, unit_id: bytes) -> int | None:
        return self._maps.get(segment, {}).get(unit_id)

    def size(self, segment: int) -> int:
        return len(self._maps.get(segment, ()))

    def ids(self, segment: int) -> list[bytes]:
        """Unit ids of ``segment`` in position order."""
        return list(self._maps.get(segment, {}))

    def segments(self) -> list[int]:
        return sorted(s for s, m in self._maps.items() if m)

    def load_segment(self, segment: int, ids: Iterable[bytes]) -> None:
        table = {}
        for uid in ids:
            if uid in table:
                raise ModelError(f"duplicate id {uid!r} in segment {segment} dictionary")
            table[uid] = len(table)
        for uid in self._maps.get(segment, {}):
            self._index.pop(uid, None)
        self._maps[segment] = table
        self._index.update((uid, (segment, pos)) for uid, pos in table.items())


# ---------------------------------------------------------------------------
# tables

@dataclass
class ExposeSegment:
    min_expose_date: int
    offset: BSI
    bucket: BSI

    def expose_dates(self) -> dict[int, int]:
        return {p: self.min_expose_date + o - 1 for p, o in self.offset.to_dict().items()}


@dataclass
class ExposeTable:
    strategy: str
    segments: dict[int, ExposeSegment] = field(default_factory=dict)

    def segment(self, segment: int) -> ExposeSegment | None:
        return self.segments.get(segment)


@dataclass
class MetricTable:
    metric: str
    scale: int = 1
    partitions: dict[int, dict[int, BSI]] = field(default_factory=dict)

    def dates(self) -> list[int]:
        return sorted(self.partitions)


@dataclass
class DimensionTable:
    name: str
    partitions: dict[int, dict[int, BSI]] = field(default_factory=dict)

    def dates(self) -> list[int]:
        return sorted(self.partitions)


@dataclass
class BuildStats:
    rows: int = 0
    dropped_zero: int = 0


def _as_bytes(uid) -> bytes:
    return uid if isinstance(uid, bytes) else str(uid).encode("utf-8")


def build_expose(
    records: Iterable[tuple], catalog: Catalog, encoder: PositionEncoder
) -> dict[str, ExposeTable]:
    """Records are ``(strategy, analysis_unit, randomization_unit, day_index)``."""
    grouped: dict[str, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    seen: set[tuple[str, bytes]] = set()
    for i, (strategy, unit, rand_unit, day) in enumerate(records):
        unit = _as_bytes(unit)
        rand_unit = _as_bytes(rand_unit)
        strategy = str(strategy)
        if (strategy, unit) in seen:
            raise IngestError(f"duplicate analysis unit {unit!r} for strategy {strategy}", i)
        seen.add((strategy, unit))
        if day < 0:
            raise IngestError("expose date before 1970-01-01", i)
        try:
            segment, pos = encoder.encode_unit(unit)
            bucket = catalog.bucket_of(rand_unit)
        except ModelError as exc:
            raise IngestError(str(exc), i) from None
        grouped[strategy][segment].append((pos, day, bucket))
    tables = {}
    for strategy, by_segment in grouped.items():
        table = ExposeTable(strategy)
        for segment, rows in sorted(by_segment.items()):
            arr = np.array(rows, dtype=np.int64)
            lo = int(arr[:, 1].min())
            table.segments[segment] = ExposeSegment(
                min_expose_date=lo,
                offset=BSI.from_arrays(arr[:, 0], (arr[:, 1] - lo + 1).astype(np.uint64)),
                bucket=BSI.from_arrays(arr[:, 0], (arr[:, 2] + 1).astype(np.uint64)),
            )
        tables[strategy] = table
    return tables


def _build_valued(records, encoder, key_name, scale_of):
    grouped: dict[tuple[str, int], dict[int, tuple[list, list]]] = defaultdict(
        lambda: defaultdict(lambda: ([], []))
    )
    seen: set[tuple[str, int, bytes]] = set()
    stats = BuildStats()
    for i, (name, day, unit, raw) in enumerate(records):
        name = str(name)
        unit = _as_bytes(unit)
        if (name, day, unit) in seen:
            raise IngestError(f"duplicate ({key_name}, date, unit) for {name} / {unit!r}", i)
        seen.add((name, day, unit))
        if day < 0:
            raise IngestError("date before 1970-01-01", i)
        try:
            value = scale_of(name, raw)
            segment, pos = encoder.encode_unit(unit)
        except ModelError as exc:
            raise IngestError(str(exc), i) from None
        stats.rows += 1
        if value == 0:
            stats.dropped_zero += 1
            # still registers the day so an all-zero day is an empty partition
            grouped[(name, day)]
            continue
        cols = grouped[(name, day)][segment]
        cols[0].append(pos)
        cols[1].append(value)
    partitions: dict[str, dict[int, dict[int, BSI]]] = defaultdict(dict)
    for (name, day), by_segment in grouped.items():
        partitions[name][day] = {
            seg: BSI.from_arrays(np.array(p, dtype=np.int64), np.array(v, dtype=np.uint64))
            for seg, (p, v) in sorted(by_segment.items())
        }
    return partitions, stats


def build_metric(
    records: Iterable[tuple], catalog: Catalog, encoder: PositionEncoder
) -> tuple[dict[str, MetricTable], BuildStats]:
    """Records are ``(metric, day_index, analysis_unit, raw_value)``."""

    def scaled(metric, raw):
        return to_fixed_point(raw, catalog.scale_of(metric))

    partitions, stats = _build_valued(records, encoder, "metric", scaled)
    tables = {}
    for metric, parts in partitions.items():
        catalog.metric_scales.setdefault(metric, 1)
        tables[metric] = MetricTable(metric, catalog.scale_of(metric), dict(parts))
    return tables, stats


def build_dimension(
    records: Iterable[tuple], catalog: Catalog, encoder: PositionEncoder
) -> tuple[dict[str, DimensionTable], BuildStats]:
    """Records are ``(dimension, day_index, analysis_unit, raw_value)``.

    Categorical dimensions store codes from the catalog dictionary (first
    code is 1); numeric ones store fixed-point values.
    """

    def encode(name, raw):
        spec = catalog.dimensions.setdefault(name, DimensionSpec())
        if spec.categorical:
            return spec.code_for(str(raw), create=True)
        return to_fixed_point(raw, spec.scale)

    partitions, stats = _build_valued(records, encoder, "dimension", encode)
    return {n: DimensionTable(n, dict(p)) for n, p in partitions.items()}, stats


# ---------------------------------------------------------------------------
# in-memory dataset

class Dataset:
    """All tables of one catalog, addressed the way the engine reads them."""

    def __init__(self, catalog: Catalog | None = None, encoder: PositionEncoder | None = None):
        self.catalog = catalog or Catalog()
        self.encoder = encoder or PositionEncoder(self.catalog)
        self.expose: dict[str, ExposeTable] = {}
        self.metrics: dict[str, MetricTable] = {}
        self.dimensions: dict[str, DimensionTable] = {}
        self.stats: dict[str, BuildStats] = {}

    @classmethod
    def from_records(
        cls,
        catalog: Catalog,
        expose: Iterable[tuple] = (),
        metrics: Iterable[tuple] = (),
        dimensions: Iterable[tuple] = (),
        priority: Iterable[bytes] = (),
    ) -> "Dataset":
        ds = cls(catalog)
        ds.encoder.preregister(_as_bytes(u) for u in priority)
        ds.add_expose(expose)
        ds.add_metrics(metrics)
        ds.add_dimensions(dimensions)
        return ds

    def add_expose(self, records: Iterable[tuple]) -> dict[str, ExposeTable]:
        tables = build_expose(records, self.catalog, self.encoder)
        self.expose.update(tables)
        return tables

    def add_metrics(self, records: Iterable[tuple]) -> BuildStats:
        tables, stats = build_metric(records, self.catalog, self.encoder)
        for name, t in tables.items():
            self.metrics.setdefault(name, MetricTable(name, t.scale)).partitions.update(t.partitions)
        self.stats["metric"] = stats
        return stats

    def add_dimensions(self, records: Iterable[tuple]) -> BuildStats:
        tables, stats = build_dimension(records, self.catalog, self.encoder)
        for name, t in tables.items():
            self.dimensions.setdefault(name, DimensionTable(name)).partitions.update(t.partitions)
        self.stats["dimension"] = stats
        return stats

    # -- engine-facing reads --------------------------------------------------

    def segments(self) -> Iterator[int]:
        return iter(range(self.catalog.n_segments))

    def strategies(self) -> list[str]:
        return sorted(self.expose)

    def expose_segment(self, strategy: str, segment: int) -> ExposeSegment | None:
        table = self.expose.get(strategy)
        if table is None:
            raise UnknownStrategyError(strategy)
        return table.segment(segment)

    def metric_dates(self, metric: str) -> list[int]:
        table = self.metrics.get(metric)
        return table.dates() if table else []

    def has_metric(self, metric: str, day: int) -> bool:
        table = self.metrics.get(metric)
        return table is not None and day in table.partitions

    def metric_segment(self, metric: str, day: int, segment: int) -> BSI:
        table = self.metrics.get(metric)
        if table is None or day not in table.partitions:
            raise MissingPartitionError([f"metric/{metric}@{format_date(day)}"])
        return table.partitions[day].get(segment, EMPTY_BSI)

    def metric_partition(self, metric: str, day: int) -> dict[int, BSI]:
        table = self.metrics.get(metric)
        if table is None or day not in table.partitions:
            raise MissingPartitionError([f"metric/{metric}@{format_date(day)}"])
        return dict(table.partitions[day])

    def has_dimension(self, name: str, day: int) -> bool:
        table = self.dimensions.get(name)
        return table is not None and day in table.partitions

    def dimension_segment(self, name: str, day: int, segment: int) -> BSI:
        if name not in self.catalog.dimensions and name not in self.dimensions:
            raise UnknownDimensionError(name)
        table = self.dimensions.get(name)
        if table is None or day not in table.partitions:
            raise MissingPartitionError([f"dimension/{name}@{format_date(day)}"])
        return table.partitions[day].get(segment, EMPTY_BSI)
