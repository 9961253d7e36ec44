"""Row-at-a-time reference implementation of the metric queries.

Works directly on raw records with dictionaries: join on unit id, filter by
first-expose date, group by bucket.  It shares nothing with the BSI path
except the hash functions and fixed-point rule that define the data model,
and serves as the oracle for engine equivalence tests and as the "normal
format" side of the benchmarks.
"""

from __future__ import annotations

import operator
from collections import defaultdict
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .model import Catalog, to_fixed_point

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _uid(u) -> bytes:
    return u if isinstance(u, bytes) else str(u).encode("utf-8")


class ReferenceEngine:
    def __init__(
        self,
        catalog: Catalog,
        expose: Iterable[tuple] = (),
        metrics: Iterable[tuple] = (),
        dimensions: Iterable[tuple] = (),
    ):
        self.catalog = catalog
        self.n_buckets = catalog.n_buckets
        self.expose: dict[str, dict[bytes, tuple[int, int]]] = defaultdict(dict)
        for strategy, unit, rand_unit, day in expose:
            self.expose[str(strategy)][_uid(unit)] = (day, catalog.bucket_of(_uid(rand_unit)))
        self.metrics: dict[tuple[str, int], dict[bytes, int]] = defaultdict(dict)
        for metric, day, unit, raw in metrics:
            v = to_fixed_point(raw, catalog.scale_of(str(metric)))
            part = self.metrics[(str(metric), day)]
            if v:
                part[_uid(unit)] = v
        self.dimensions: dict[tuple[str, int], dict[bytes, object]] = defaultdict(dict)
        self.codes: dict[str, dict[str, int]] = defaultdict(dict)
        for name, day, unit, raw in dimensions:
            name = str(name)
            spec = catalog.dimensions.get(name)
            if spec is not None and spec.categorical:
                codes = self.codes[name]
                value = codes.setdefault(str(raw), len(codes) + 1)
            else:
                value = to_fixed_point(raw, spec.scale if spec else 1)
            if value:
                self.dimensions[(name, day)][_uid(unit)] = value

    def _matches(self, where, day: int) -> set[bytes] | None:
        if where is None:
            return None
        keep: set[bytes] | None = None
        for clause in where.clauses:
            spec = self.catalog.dimensions.get(clause.name)
            values = self.dimensions.get((clause.name, day), {})
            if spec is not None and spec.categorical:
                code = self.codes[clause.name].get(str(clause.literal), 0)
                hit = {u for u, v in values.items() if _OPS[clause.op](v, code)}
            else:
                lit = Fraction(clause.literal) * (spec.scale if spec else 1)
                hit = {u for u, v in values.items() if _OPS[clause.op](v, lit)}
            keep = hit if keep is None else keep & hit
        return keep

    def _units(self, strategy: str, day: int | None, allowed: set[bytes] | None):
        for unit, (first, bucket) in self.expose[strategy].items():
            if day is not None and first > day:
                continue
            if allowed is not None and unit not in allowed:
                continue
            yield unit, bucket

    def exposure(self, strategy: str, day: int | None, where=None, dim_day: int | None = None):
        counts = np.zeros(self.n_buckets, np.int64)
        allowed = self._matches(where, day if dim_day is None else dim_day)
        for _, bucket in self._units(strategy, day, allowed):
            counts[bucket] += 1
        return counts, counts.copy()

    def scorecard(
        self,
        strategy: str,
        metric: str,
        days: Sequence[int],
        agg: str = "sum",
        where=None,
        dim_day: int | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-bucket ``(sums, counts)``; for ``unique`` both hold distinct units."""
        sums = np.zeros(self.n_buckets, np.int64)
        counts = np.zeros(self.n_buckets, np.int64)
        allowed = self._matches(where, days[-1] if dim_day is None else dim_day)
        seen: set[bytes] = set()
        for day in days:
            values = self.metrics[(metric, day)]
            for unit, bucket in self._units(strategy, day, allowed):
                v = values.get(unit)
                if not v:
                    continue
                if agg == "unique":
                    if unit not in seen:
                        seen.add(unit)
                        sums[bucket] += 1
                        counts[bucket] += 1
                else:
                    sums[bucket] += v
                    counts[bucket] += 1
        return sums, counts

    def pre_experiment(
        self,
        strategy: str,
        metric: str,
        start: int,
        days: int,
        analysis_day: int | None = None,
        where=None,
        dim_day: int | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        total: dict[bytes, int] = defaultdict(int)
        for day in range(start - days, start):
            for unit, v in self.metrics[(metric, day)].items():
                total[unit] += v
        sums = np.zeros(self.n_buckets, np.int64)
        counts = np.zeros(self.n_buckets, np.int64)
        allowed = self._matches(where, analysis_day if dim_day is None else dim_day)
        for unit, bucket in self._units(strategy, analysis_day, allowed):
            v = total.get(unit)
            if v:
                sums[bucket] += v
                counts[bucket] += 1
        return sums, counts


def hash_aggregate_sum(days: Iterable[tuple[np.ndarray, np.ndarray]]) -> dict[int, int]:
    """Sum values per unit across several days of ``(positions, values)`` rows."""
    acc: dict[int, int] = defaultdict(int)
    for positions, values in days:
        for p, v in zip(positions.tolist(), values.tolist()):
            acc[p] += v
    return acc
