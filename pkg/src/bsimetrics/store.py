"""On-disk catalog: one file per (table, partition, segment) plus a TSV manifest.

Layout::

    root/manifest.tsv
    root/expose/<strategy>/seg0003.bsi
    root/metric/<metric>@<YYYYMMDD>/seg0003.bsi
    root/dimension/<name>@<YYYYMMDD>/seg0003.bsi
    root/positions/seg0003.ids

Block files are written before the manifest that references them, and the
manifest itself is replaced atomically, so a reader that opens the manifest
only ever sees complete partitions.  Every block carries a CRC32 in the
manifest and is checked on read.
"""

from __future__ import annotations

import os
import shutil
import struct
import tempfile
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import quote, unquote

from .bitmap import BitmapFormatError
from .bsi import BSI, EMPTY_BSI
from .model import (
    Catalog,
    Dataset,
    DimensionSpec,
    ExposeSegment,
    MissingPartitionError,
    PositionEncoder,
    UnknownDimensionError,
    UnknownStrategyError,
    format_date,
    parse_date,
)

MANIFEST = "manifest.tsv"
STORE_VERSION = 1
KINDS = ("expose", "metric", "dimension")
POSITIONS = "positions"
CODECS = ("raw", "zlib")

_DATE = struct.Struct("<I")


class StoreError(Exception):
    pass


class ChecksumError(StoreError):
    pass


class MissingSegmentError(StoreError):
    pass


class VersionError(StoreError):
    pass


class ManifestError(StoreError):
    pass


def partition_key(name: str, day: int) -> str:
    return f"{name}@{format_date(day)}"


def split_key(key: str) -> tuple[str, int]:
    name, _, date = key.rpartition("@")
    if not name:
        raise ManifestError(f"partition key {key!r} has no date")
    return name, parse_date(date)


def _q(s: str) -> str:
    return quote(s, safe="@-_.:+")


@dataclass(frozen=True)
class BlockEntry:
    kind: str
    key: str
    segment: int
    crc: int
    size: int
    codec: str = "raw"

    def relpath(self) -> str:
        if self.kind == POSITIONS:
            return f"{POSITIONS}/seg{self.segment:04d}.ids"
        return f"{self.kind}/{_q(self.key)}/seg{self.segment:04d}.bsi"


@dataclass
class Partition:
    """``segments`` maps segment id to a BSI (metric, dimension) or ExposeSegment."""

    kind: str
    key: str
    segments: dict[int, object] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# block payloads

def encode_block(kind: str, obj) -> bytes:
    if kind == "expose":
        return _DATE.pack(obj.min_expose_date) + obj.offset.to_bytes() + obj.bucket.to_bytes()
    if kind in ("metric", "dimension"):
        return obj.to_bytes()
    if kind == POSITIONS:
        return "".join(uid.hex() + "\n" for uid in obj).encode("ascii")
    raise StoreError(f"unknown block kind {kind!r}")


def decode_block(kind: str, data: bytes):
    if kind == "expose":
        if len(data) < _DATE.size:
            raise BitmapFormatError("expose block shorter than its date header")
        (lo,) = _DATE.unpack_from(data, 0)
        offset, pos = BSI.read_from(data, _DATE.size)
        bucket, end = BSI.read_from(data, pos)
        if end != len(data):
            raise BitmapFormatError("trailing bytes after expose block")
        return ExposeSegment(lo, offset, bucket)
    if kind in ("metric", "dimension"):
        return BSI.from_bytes(data)
    if kind == POSITIONS:
        return [bytes.fromhex(line) for line in data.decode("ascii").splitlines()]
    raise StoreError(f"unknown block kind {kind!r}")


# ---------------------------------------------------------------------------
# manifest

@dataclass
class Manifest:
    catalog: Catalog = field(default_factory=Catalog)
    partitions: set[tuple[str, str]] = field(default_factory=set)
    blocks: dict[tuple[str, str], dict[int, BlockEntry]] = field(default_factory=dict)

    def to_text(self) -> str:
        c = self.catalog
        lines = [
            f"version\t{STORE_VERSION}",
            f"segments\t{c.n_segments}",
            f"buckets\t{c.n_buckets}",
            f"shared_bucketing\t{int(c.shared_bucketing)}",
            f"segment_salt\t{c.segment_salt.hex() or '-'}",
            f"bucket_salt\t{c.bucket_salt.hex() or '-'}",
        ]
        for name, scale in sorted(c.metric_scales.items()):
            lines.append(f"metric\t{_q(name)}\t{scale}")
        for name, spec in sorted(c.dimensions.items()):
            kind = "categorical" if spec.categorical else "numeric"
            lines.append(f"dimension\t{_q(name)}\t{kind}\t{spec.scale}")
            for value, code in sorted(spec.codes.items(), key=lambda kv: kv[1]):
                lines.append(f"code\t{_q(name)}\t{code}\t{_q(value)}")
        for kind, key in sorted(self.partitions):
            lines.append(f"partition\t{kind}\t{_q(key)}")
            for seg, b in sorted(self.blocks.get((kind, key), {}).items()):
                lines.append(f"block\t{kind}\t{_q(key)}\t{seg}\t{b.crc:08x}\t{b.size}\t{b.codec}")
        for seg, b in sorted(self.blocks.get((POSITIONS, ""), {}).items()):
            lines.append(f"block\t{POSITIONS}\t-\t{seg}\t{b.crc:08x}\t{b.size}\t{b.codec}")
        body = "".join(line + "\n" for line in lines)
        return body + f"checksum\t{zlib.crc32(body.encode('utf-8')):08x}\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("version\t"):
            raise ManifestError("manifest does not start with a version line")
        version = lines[0].split("\t")[1]
        if version != str(STORE_VERSION):
            raise VersionError(f"unsupported store version {version!r}")
        if not lines[-1].startswith("checksum\t"):
            raise ChecksumError("manifest has no checksum line")
        body = "".join(line + "\n" for line in lines[:-1])
        try:
            expected = int(lines[-1].split("\t")[1], 16)
        except (IndexError, ValueError):
            raise ChecksumError("malformed manifest checksum") from None
        if zlib.crc32(body.encode("utf-8")) != expected:
            raise ChecksumError("manifest checksum mismatch")

        header: dict[str, str] = {}
        scales: dict[str, int] = {}
        dims: dict[str, DimensionSpec] = {}
        m = cls()
        for n, line in enumerate(lines[1:-1], start=2):
            f = line.split("\t")
            try:
                tag = f[0]
                if tag in ("segments", "buckets", "shared_bucketing", "segment_salt", "bucket_salt"):
                    header[tag] = f[1]
                elif tag == "metric":
                    scales[unquote(f[1])] = int(f[2])
                elif tag == "dimension":
                    dims[unquote(f[1])] = DimensionSpec(f[2] == "categorical", int(f[3]))
                elif tag == "code":
                    dims[unquote(f[1])].codes[unquote(f[3])] = int(f[2])
                elif tag == "partition":
                    m.partitions.add((f[1], unquote(f[2])))
                elif tag == "block":
                    kind = f[1]
                    key = "" if kind == POSITIONS else unquote(f[2])
                    entry = BlockEntry(kind, key, int(f[3]), int(f[4], 16), int(f[5]), f[6])
                    if entry.codec not in CODECS:
                        raise ManifestError(f"line {n}: unknown codec {entry.codec!r}")
                    m.blocks.setdefault((kind, key), {})[entry.segment] = entry
                else:
                    raise ManifestError(f"line {n}: unknown entry {tag!r}")
            except (IndexError, KeyError, ValueError) as exc:
                raise ManifestError(f"line {n}: malformed entry ({exc})") from None

        def salt(v: str) -> bytes:
            return b"" if v == "-" else bytes.fromhex(v)

        try:
            m.catalog = Catalog(
                n_segments=int(header["segments"]),
                n_buckets=int(header["buckets"]),
                shared_bucketing=header["shared_bucketing"] == "1",
                segment_salt=salt(header["segment_salt"]),
                bucket_salt=salt(header["bucket_salt"]),
                metric_scales=scales,
                dimensions=dims,
            )
        except KeyError as exc:
            raise ManifestError(f"manifest lacks {exc.args[0]!r}") from None
        return m


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def catalog_save(root: str | Path, catalog: Catalog, manifest: Manifest | None = None) -> Manifest:
    manifest = manifest or Manifest()
    manifest.catalog = catalog
    _atomic_write(Path(root) / MANIFEST, manifest.to_text().encode("utf-8"))
    return manifest


def catalog_load(root: str | Path) -> Catalog:
    return load_manifest(root).catalog


def load_manifest(root: str | Path) -> Manifest:
    path = Path(root) / MANIFEST
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise StoreError(f"no catalog at {root} (run init first)") from None
    return Manifest.from_text(text)


# ---------------------------------------------------------------------------
# store

class Store:
    """Single-writer handle on a catalog directory."""

    def __init__(self, root: str | Path, manifest: Manifest):
        self.root = Path(root)
        self.manifest = manifest

    @property
    def catalog(self) -> Catalog:
        return self.manifest.catalog

    @classmethod
    def create(cls, root: str | Path, catalog: Catalog | None = None, overwrite: bool = False) -> "Store":
        root = Path(root)
        if (root / MANIFEST).exists() and not overwrite:
            raise StoreError(f"catalog already exists at {root}")
        root.mkdir(parents=True, exist_ok=True)
        return cls(root, catalog_save(root, catalog or Catalog()))

    @classmethod
    def open(cls, root: str | Path) -> "Store":
        return cls(root, load_manifest(root))

    def commit(self) -> None:
        catalog_save(self.root, self.catalog, self.manifest)

    # -- writes ----------------------------------------------------------------

    def _write_block(self, kind: str, key: str, segment: int, obj, codec: str) -> BlockEntry:
        if codec not in CODECS:
            raise StoreError(f"unknown codec {codec!r}")
        data = encode_block(kind, obj)
        if codec == "zlib":
            data = zlib.compress(data, 6)
        entry = BlockEntry(kind, key, segment, zlib.crc32(data), len(data), codec)
        _atomic_write(self.root / entry.relpath(), data)
        return entry

    def write_partition(self, p: Partition, codec: str = "raw", commit: bool = True) -> dict[int, BlockEntry]:
        """Write (or replace) one partition; empty segments get no block."""
        if p.kind not in KINDS:
            raise StoreError(f"unknown table kind {p.kind!r}")
        n = self.catalog.n_segments
        entries = {}
        for seg, obj in sorted(p.segments.items()):
            if not 0 <= seg < n:
                raise StoreError(f"segment {seg} outside 0..{n - 1}")
            if p.kind != "expose" and not obj.width:
                continue
            entries[seg] = self._write_block(p.kind, p.key, seg, obj, codec)
        stale = set(self.manifest.blocks.get((p.kind, p.key), {})) - set(entries)
        self.manifest.partitions.add((p.kind, p.key))
        self.manifest.blocks[(p.kind, p.key)] = entries
        if commit:
            self.commit()
        for seg in stale:
            path = self.root / BlockEntry(p.kind, p.key, seg, 0, 0).relpath()
            path.unlink(missing_ok=True)
        return entries

    def write_positions(self, encoder: PositionEncoder, codec: str = "raw", commit: bool = True) -> None:
        blocks = {
            seg: self._write_block(POSITIONS, "", seg, encoder.ids(seg), codec)
            for seg in encoder.segments()
        }
        self.manifest.blocks[(POSITIONS, "")] = blocks
        if commit:
            self.commit()

    def write_dataset(self, ds: Dataset, codec: str = "raw") -> None:
        """Persist every table of ``ds`` and commit once."""
        self.manifest.catalog = ds.catalog
        for strategy, table in sorted(ds.expose.items()):
            self.write_partition(Partition("expose", strategy, dict(table.segments)), codec, commit=False)
        for name, table in sorted(ds.metrics.items()):
            for day, segs in sorted(table.partitions.items()):
                self.write_partition(Partition("metric", partition_key(name, day), segs), codec, commit=False)
        for name, table in sorted(ds.dimensions.items()):
            for day, segs in sorted(table.partitions.items()):
                self.write_partition(Partition("dimension", partition_key(name, day), segs), codec, commit=False)
        self.write_positions(ds.encoder, codec, commit=False)
        self.commit()

    # -- reads -----------------------------------------------------------------

    def has_partition(self, kind: str, key: str) -> bool:
        return (kind, key) in self.manifest.partitions

    def partition_keys(self, kind: str) -> list[str]:
        return sorted(k for t, k in self.manifest.partitions if t == kind)

    def read_block(self, entry: BlockEntry):
        path = self.root / entry.relpath()
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise MissingSegmentError(
                f"segment {entry.segment} of {entry.kind}/{entry.key or '-'} missing at {path}"
            ) from None
        if len(data) != entry.size or zlib.crc32(data) != entry.crc:
            raise ChecksumError(f"checksum mismatch in {path}")
        if entry.codec == "zlib":
            data = zlib.decompress(data)
        return decode_block(entry.kind, data)

    def read_segment(self, kind: str, key: str, segment: int):
        """One segment's block, or ``None``/empty BSI when it holds no rows."""
        if not self.has_partition(kind, key):
            raise MissingPartitionError([f"{kind}/{key}"])
        if not 0 <= segment < self.catalog.n_segments:
            raise MissingSegmentError(f"segment {segment} outside 0..{self.catalog.n_segments - 1}")
        entry = self.manifest.blocks.get((kind, key), {}).get(segment)
        if entry is None:
            return None if kind == "expose" else EMPTY_BSI
        return self.read_block(entry)

    def read_partition(self, kind: str, key: str, segments: Iterable[int] | None = None) -> Partition:
        """Read a partition; with ``segments`` only those blocks are opened."""
        if not self.has_partition(kind, key):
            raise MissingPartitionError([f"{kind}/{key}"])
        blocks = self.manifest.blocks.get((kind, key), {})
        wanted = sorted(blocks) if segments is None else sorted(set(segments))
        out = Partition(kind, key)
        for seg in wanted:
            obj = self.read_segment(kind, key, seg)
            if obj is not None and (kind == "expose" or obj.width):
                out.segments[seg] = obj
        return out

    def load_encoder(self) -> PositionEncoder:
        enc = PositionEncoder(self.catalog)
        for seg, entry in sorted(self.manifest.blocks.get((POSITIONS, ""), {}).items()):
            enc.load_segment(seg, self.read_block(entry))
        return enc

    def dataset(self, cache_blocks: int = 4096) -> "StoreDataset":
        return StoreDataset(self, cache_blocks)

    def files(self) -> Iterator[Path]:
        yield self.root / MANIFEST
        for blocks in self.manifest.blocks.values():
            for entry in blocks.values():
                yield self.root / entry.relpath()

    def nbytes(self, kind: str | None = None) -> int:
        return sum(
            e.size
            for (k, _), blocks in self.manifest.blocks.items()
            if kind is None or k == kind
            for e in blocks.values()
        )


def save_dataset(ds: Dataset, root: str | Path, codec: str = "raw") -> Store:
    """Write ``ds`` as a fresh catalog at ``root``, replacing what was there."""
    root = Path(root)
    if root.exists():
        shutil.rmtree(root)
    store = Store.create(root, ds.catalog)
    store.write_dataset(ds, codec)
    return store


# ---------------------------------------------------------------------------
# engine adapter

class StoreDataset:
    """Reads blocks on demand; satisfies the data protocol of :class:`Engine`."""

    def __init__(self, store: Store, cache_blocks: int = 4096):
        self.store = store
        self.catalog = store.catalog
        self._cache: OrderedDict[tuple, object] = OrderedDict()
        self._cap = cache_blocks
        self._lock = threading.Lock()
        self._encoder: PositionEncoder | None = None

    @property
    def encoder(self) -> PositionEncoder:
        if self._encoder is None:
            self._encoder = self.store.load_encoder()
        return self._encoder

    def _get(self, kind: str, key: str, segment: int):
        k = (kind, key, segment)
        with self._lock:
            if k in self._cache:
                self._cache.move_to_end(k)
                return self._cache[k]
        obj = self.store.read_segment(kind, key, segment)
        with self._lock:
            self._cache[k] = obj
            while len(self._cache) > self._cap:
                self._cache.popitem(last=False)
        return obj

    def segments(self) -> Iterator[int]:
        return iter(range(self.catalog.n_segments))

    def strategies(self) -> list[str]:
        return self.store.partition_keys("expose")

    def expose_segment(self, strategy: str, segment: int) -> ExposeSegment | None:
        if not self.store.has_partition("expose", strategy):
            raise UnknownStrategyError(strategy)
        return self._get("expose", strategy, segment)

    def _dates(self, kind: str, name: str) -> list[int]:
        out = []
        for key in self.store.partition_keys(kind):
            n, day = split_key(key)
            if n == name:
                out.append(day)
        return sorted(out)

    def metric_dates(self, metric: str) -> list[int]:
        return self._dates("metric", metric)

    def dimension_dates(self, name: str) -> list[int]:
        return self._dates("dimension", name)

    def has_metric(self, metric: str, day: int) -> bool:
        return self.store.has_partition("metric", partition_key(metric, day))

    def metric_segment(self, metric: str, day: int, segment: int) -> BSI:
        key = partition_key(metric, day)
        if not self.store.has_partition("metric", key):
            raise MissingPartitionError([f"metric/{key}"])
        return self._get("metric", key, segment)

    def metric_partition(self, metric: str, day: int) -> dict[int, BSI]:
        key = partition_key(metric, day)
        return dict(self.store.read_partition("metric", key).segments)

    def has_dimension(self, name: str, day: int) -> bool:
        return self.store.has_partition("dimension", partition_key(name, day))

    def dimension_segment(self, name: str, day: int, segment: int) -> BSI:
        if name not in self.catalog.dimensions:
            raise UnknownDimensionError(name)
        key = partition_key(name, day)
        if not self.store.has_partition("dimension", key):
            raise MissingPartitionError([f"dimension/{key}"])
        return self._get("dimension", key, segment)

