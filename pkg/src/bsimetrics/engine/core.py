"""Metric computation over BSI tables.

Each segment is computed independently (filter exposures, mask the metric,
group by bucket) and the per-segment bucket vectors are summed.  All
arithmetic is integer; floating point starts in :mod:`bsimetrics.stats`.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from ..bitmap import Bitmap
from ..bsi import (
    BSI,
    EMPTY_BSI,
    AggKind,
    CompareOp,
    aggregate,
    compare_scalar,
    multiply,
    multiply_binary,
)
from ..model import (
    ExposeSegment,
    MissingPartitionError,
    UnknownDimensionError,
    format_date,
)
from .preagg import PreAggTree, TreeCache
from .predicate import Clause, PredicateExpr, parse_predicate

T = TypeVar("T")


class Agg(str, enum.Enum):
    SUM = "sum"
    COUNT = "count"
    UNIQUE = "unique"


class OrphanPositionError(ValueError):
    def __init__(self, count: int):
        super().__init__(f"{count} valued position(s) have no bucket")
        self.count = count


class PredicateBindError(ValueError):
    pass


@dataclass
class BucketVector:
    """Per-bucket sums and unit counts; ``kind`` picks which one is the metric."""

    sums: np.ndarray
    counts: np.ndarray
    kind: Agg = Agg.SUM

    @classmethod
    def zeros(cls, n_buckets: int, kind: Agg = Agg.SUM) -> "BucketVector":
        return cls(np.zeros(n_buckets, np.int64), np.zeros(n_buckets, np.int64), kind)

    @property
    def values(self) -> np.ndarray:
        return self.sums if self.kind is Agg.SUM else self.counts

    def __len__(self) -> int:
        return int(self.sums.size)

    def __add__(self, other: "BucketVector") -> "BucketVector":
        if len(self) != len(other):
            raise ValueError("bucket vectors differ in length")
        return BucketVector(self.sums + other.sums, self.counts + other.counts, self.kind)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BucketVector):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.sums, other.sums)
            and np.array_equal(self.counts, other.counts)
        )

    def total(self) -> int:
        return int(self.values.sum())


def group_by_bucket(value: BSI, bucket: BSI, n_buckets: int = 1024) -> BucketVector:
    """Sum ``value`` per bucket (bucket code = bucket id + 1).

    Positions are split recursively on each bucket slice from the top down;
    after the last slice a mask holds exactly one bucket code.  Empty
    branches are pruned, so the work follows the buckets actually present.
    """
    sums = [0] * n_buckets
    counts = [0] * n_buckets
    support = value.nonzero()
    if support:
        orphans = support.andnot(bucket.nonzero())
        if orphans:
            raise OrphanPositionError(len(orphans))
        bslices = bucket.slices
        vslices = value.slices

        def descend(mask: Bitmap, n: int, level: int, code: int) -> None:
            if level < 0:
                b = code - 1
                if not 0 <= b < n_buckets:
                    raise ValueError(f"bucket code {code} outside 1..{n_buckets}")
                counts[b] += n
                sums[b] += sum(mask.intersection_cardinality(s) << i for i, s in enumerate(vslices))
                return
            s = bslices[level]
            hi = mask & s
            n_hi = len(hi)
            if n_hi:
                descend(hi, n_hi, level - 1, code | (1 << level))
            if n_hi < n:
                lo = mask if not n_hi else mask.andnot(s)
                descend(lo, n - n_hi, level - 1, code)

        descend(support, len(support), len(bslices) - 1, 0)
    return BucketVector(np.array(sums, dtype=np.int64), np.array(counts, dtype=np.int64))


def group_by_bucket_scan(value: BSI, bucket: BSI, n_buckets: int = 1024) -> BucketVector:
    """One equality scan per bucket; the slow reference for the radix version."""
    out = BucketVector.zeros(n_buckets)
    support = value.nonzero()
    orphans = support.andnot(bucket.nonzero())
    if orphans:
        raise OrphanPositionError(len(orphans))
    for b in range(n_buckets):
        mask = compare_scalar(bucket, CompareOp.EQ, b + 1)
        masked = multiply_binary(value, mask)
        out.sums[b] = masked.sum()
        out.counts[b] = masked.count()
    return out


def rmse_squared(v: BSI) -> Fraction:
    """Population variance of the present values, computed from BSI sums."""
    n = compare_scalar(v, CompareOp.GT, 0).sum()
    if not n:
        raise ValueError("rmse of an empty BSI")
    return Fraction(multiply(v, v).sum(), n) - Fraction(v.sum(), n) ** 2


def rmse(v: BSI) -> float:
    return math.sqrt(rmse_squared(v))


class Engine:
    """Computes bucket vectors from a dataset (in-memory or on-disk).

    ``data`` must provide ``catalog``, ``segments()``, ``expose_segment``,
    ``metric_segment``, ``metric_partition``, ``has_metric``,
    ``dimension_segment`` and ``has_dimension``.
    """

    def __init__(self, data, threads: int = 1, cache_bytes: int = 256 << 20):
        self.data = data
        self.catalog = data.catalog
        self.threads = max(1, int(threads))
        self.trees = TreeCache(cache_bytes)

    @property
    def n_buckets(self) -> int:
        return self.catalog.n_buckets

    def _map(self, fn: Callable[[int], T], segments: Iterable[int]) -> list[T]:
        segments = list(segments)
        if self.threads == 1:
            return [fn(s) for s in segments]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, segments))

    def _reduce(self, parts: Iterable[BucketVector | None], kind: Agg) -> BucketVector:
        out = BucketVector.zeros(self.n_buckets, kind)
        for p in parts:
            if p is not None:
                out.sums += p.sums
                out.counts += p.counts
        return out

    # -- exposure -------------------------------------------------------------

    @staticmethod
    def _exposed_by(exp: ExposeSegment, day: int | None) -> BSI:
        if day is None:
            return BSI.binary(exp.offset.nonzero())
        k = day - exp.min_expose_date + 1
        if k < 1:
            return EMPTY_BSI
        return compare_scalar(exp.offset, CompareOp.LE, k)

    def expose_filter(self, strategy: str, segment: int, day: int | None) -> BSI:
        """Units of ``strategy`` first exposed on or before ``day``.

        ``day=None`` means everyone ever exposed.
        """
        exp = self.data.expose_segment(strategy, segment)
        if exp is None:
            return EMPTY_BSI
        return self._exposed_by(exp, day)

    def expose_window_filter(self, strategy: str, segment: int, lo: int, hi: int) -> BSI:
        """Units whose offset lies in ``[lo, hi]`` (offset 1 = first expose day)."""
        if lo < 1 or lo > hi:
            raise ValueError(f"bad offset window [{lo}, {hi}]")
        exp = self.data.expose_segment(strategy, segment)
        if exp is None:
            return EMPTY_BSI
        ge = compare_scalar(exp.offset, CompareOp.GE, lo)
        le = compare_scalar(exp.offset, CompareOp.LE, hi)
        return multiply_binary(ge, le)

    # -- deep-dive filters ---------------------------------------------------

    def _clause_filter(self, clause: Clause, day: int, segment: int) -> BSI:
        name = clause.name
        spec = self.catalog.dimensions.get(name)
        dim = self.data.dimension_segment(name, day, segment)
        op = clause.compare_op
        if spec is not None and spec.categorical:
            code = spec.codes.get(str(clause.literal))
            if code is None:
                if op is CompareOp.EQ:
                    return EMPTY_BSI
                if op is CompareOp.NE:
                    return BSI.binary(dim.nonzero())
                raise PredicateBindError(f"unknown value {clause.literal!r} for {name}")
            if op not in (CompareOp.EQ, CompareOp.NE):
                raise PredicateBindError(f"ordering comparison on categorical {name}")
            return compare_scalar(dim, op, code)
        if isinstance(clause.literal, str):
            raise PredicateBindError(f"non-numeric literal for numeric dimension {name}")
        k = Fraction(clause.literal) * (spec.scale if spec else 1)
        if k.denominator == 1 and k >= 0:
            return compare_scalar(dim, op, int(k))
        # non-integral or negative literal: rewrite on the integer grid
        nothing, everything = EMPTY_BSI, BSI.binary(dim.nonzero())
        if op is CompareOp.EQ:
            return nothing
        if op is CompareOp.NE:
            return everything
        if op in (CompareOp.LT, CompareOp.LE):
            m = math.ceil(k) - 1 if op is CompareOp.LT else math.floor(k)
            return compare_scalar(dim, CompareOp.LE, m) if m >= 0 else nothing
        m = math.floor(k) + 1 if op is CompareOp.GT else math.ceil(k)
        return compare_scalar(dim, CompareOp.GE, m) if m > 0 else everything

    def dimension_filter(self, expr: PredicateExpr | str, day: int, segment: int) -> BSI:
        """Binary BSI of units satisfying every clause on ``day``'s dimensions."""
        if isinstance(expr, str):
            expr = parse_predicate(expr)
        return aggregate(AggKind.MUL, [self._clause_filter(c, day, segment) for c in expr.clauses])

    def _check_dimensions(self, expr: PredicateExpr | None, day: int) -> None:
        if expr is None:
            return
        missing = []
        for name in expr.names():
            if name not in self.catalog.dimensions:
                raise UnknownDimensionError(name)
            if not self.data.has_dimension(name, day):
                missing.append(f"dimension/{name}@{format_date(day)}")
        if missing:
            raise MissingPartitionError(missing)

    def _check_metric(self, metric: str, days: Sequence[int]) -> None:
        missing = [
            f"metric/{metric}@{format_date(d)}" for d in days if not self.data.has_metric(metric, d)
        ]
        if missing:
            raise MissingPartitionError(missing)

    @staticmethod
    def _as_expr(where) -> PredicateExpr | None:
        if where is None or isinstance(where, PredicateExpr):
            return where
        return parse_predicate(where)

    # -- scorecards ------------------------------------------------------------

    def _segment_filter(self, exp, day, where, dim_day, segment) -> BSI:
        f = self._exposed_by(exp, day)
        if where is not None and f.width:
            f = multiply_binary(f, self.dimension_filter(where, dim_day, segment))
        return f

    def exposure(self, strategy: str, day: int | None, where=None, dim_day: int | None = None) -> BucketVector:
        """Exposed-unit counts per bucket: the usual per-unit denominator."""
        where = self._as_expr(where)
        dim_day = day if dim_day is None else dim_day
        self._check_dimensions(where, dim_day)

        def run(seg):
            exp = self.data.expose_segment(strategy, seg)
            if exp is None:
                return None
            f = self._segment_filter(exp, day, where, dim_day, seg)
            return group_by_bucket(f, exp.bucket, self.n_buckets)

        return self._reduce(self._map(run, self.data.segments()), Agg.COUNT)

    def scorecard(self, strategy: str, metric: str, day: int, agg: Agg | str = Agg.SUM, where=None) -> BucketVector:
        return self.multi_day_scorecard(strategy, metric, [day], agg, where)

    def multi_day_scorecard(
        self,
        strategy: str,
        metric: str,
        days: Sequence[int],
        agg: Agg | str = Agg.SUM,
        where=None,
        dim_day: int | None = None,
    ) -> BucketVector:
        """Bucket vector over several days.

        Sum and Count add the daily vectors.  UniqueUnits keeps a binary
        state per day, merges the states with distinctPos and counts once.
        Dimension filters bind to ``dim_day`` (default: the last day).
        """
        agg = Agg(agg)
        days = list(days)
        if not days:
            raise ValueError("no days given")
        if days != sorted(set(days)):
            raise ValueError("days must be strictly ascending")
        where = self._as_expr(where)
        dim_day = days[-1] if dim_day is None else dim_day
        self.data.expose_segment(strategy, 0)  # raises for unknown strategy
        self._check_metric(metric, days)
        self._check_dimensions(where, dim_day)

        def run(seg):
            exp = self.data.expose_segment(strategy, seg)
            if exp is None:
                return None
            dim_f = None
            if where is not None:
                dim_f = self.dimension_filter(where, dim_day, seg)
            filtered = []
            for d in days:
                f = self._exposed_by(exp, d)
                if dim_f is not None:
                    f = multiply_binary(f, dim_f)
                filtered.append(multiply_binary(self.data.metric_segment(metric, d, seg), f))
            if agg is Agg.UNIQUE:
                state = aggregate(AggKind.DISTINCT, filtered)
                return group_by_bucket(state, exp.bucket, self.n_buckets)
            out = BucketVector.zeros(self.n_buckets)
            for v in filtered:
                out = out + group_by_bucket(v, exp.bucket, self.n_buckets)
            return out

        return self._reduce(self._map(run, self.data.segments()), agg)

    # -- pre-experiment --------------------------------------------------------

    def preagg_tree(self, metric: str, first: int, last: int, kind: AggKind | str = AggKind.SUM) -> PreAggTree:
        kind = AggKind(kind)
        self._check_metric(metric, range(first, last + 1))
        key = (metric, first, last, kind)
        return self.trees.get(
            key, lambda: PreAggTree(first, last, kind, lambda d: self.data.metric_partition(metric, d))
        )

    def pre_experiment(
        self,
        strategy: str,
        metric: str,
        start: int,
        days: int,
        analysis_day: int | None = None,
        where=None,
        dim_day: int | None = None,
    ) -> BucketVector:
        """Covariate bucket vector: metric summed over ``start-days .. start-1``.

        Units count if first exposed on or before ``analysis_day`` (default:
        everyone ever exposed) and, with ``where``, match it on ``dim_day``.
        """
        if days < 1:
            raise ValueError("pre-period must cover at least one day")
        where = self._as_expr(where)
        if where is not None and dim_day is None:
            if analysis_day is None:
                raise ValueError("a filtered covariate needs dim_day or analysis_day")
            dim_day = analysis_day
        self.data.expose_segment(strategy, 0)
        self._check_dimensions(where, dim_day)
        tree = self.preagg_tree(metric, start - days, start - 1, AggKind.SUM)
        covariate = tree.query(start - days, start - 1)

        def run(seg):
            exp = self.data.expose_segment(strategy, seg)
            if exp is None:
                return None
            f = self._segment_filter(exp, analysis_day, where, dim_day, seg)
            v = multiply_binary(covariate.get(seg, EMPTY_BSI), f)
            return group_by_bucket(v, exp.bucket, self.n_buckets)

        return self._reduce(self._map(run, self.data.segments()), Agg.SUM)
