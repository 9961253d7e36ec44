"""Row format vs BSI format benchmarks on synthetic data.

Each scenario builds one set of rows, checks that both pipelines give the
same answer, then times them.  Timings are the median of ``runs`` repeats
after one warm-up call.
"""

from __future__ import annotations

import statistics
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bitmap import Bitmap
from .bsi import add
from .codec import (
    NormalRows,
    decode_per_bitmap,
    decode_straightforward,
    encode_presorted,
    encode_straightforward,
)
from .generate import pareto_values
from .reference import hash_aggregate_sum

SCENARIOS = ("storage", "compute", "encode", "decode", "scorecard")
REPORT_COLUMNS = ("scenario", "measure", "unit", "normal", "bsi", "ratio", "rows", "runs")


class BenchMismatchError(AssertionError):
    """The two pipelines disagreed, so their timings are meaningless."""


@dataclass
class Measure:
    name: str
    unit: str
    normal: float
    bsi: float

    @property
    def ratio(self) -> float:
        return self.bsi / self.normal if self.normal else float("nan")


@dataclass
class BenchReport:
    scenario: str
    rows: int
    runs: int
    measures: list[Measure] = field(default_factory=list)

    def records(self) -> list[tuple]:
        return [
            (self.scenario, m.name, m.unit, m.normal, m.bsi, m.ratio, self.rows, self.runs)
            for m in self.measures
        ]


def median_time(fn: Callable[[], object], runs: int = 5) -> float:
    fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def metric_rows(
    units: int, density: float = 0.6, alpha: float = 1.16, cap: int = 100, seed: int = 0
) -> NormalRows:
    """One day of one metric over compact positions ``0..units-1``."""
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(rng.random(units) < density)
    return NormalRows(pos, pareto_values(rng, alpha, cap, pos.size), sorted=True)


def bench_storage(units: int, density: float = 0.6, cap: int = 100, seed: int = 0, **_) -> BenchReport:
    rows = metric_rows(units, density, cap=cap, seed=seed)
    bsi = encode_presorted(rows)
    raw = rows.to_records().tobytes()
    blob = bsi.to_bytes()
    if decode_per_bitmap(bsi, bsi.nonzero()) != rows:
        raise BenchMismatchError("BSI does not decode back to the rows")
    report = BenchReport("storage", len(rows), 1)
    report.measures.append(Measure("bytes", "B", float(len(raw)), float(len(blob))))
    report.measures.append(
        Measure("bytes_zlib", "B", float(len(zlib.compress(raw, 6))), float(len(zlib.compress(blob, 6))))
    )
    return report


def bench_compute(
    units: int, density: float = 0.6, cap: int = 100, seed: int = 0, runs: int = 5, **_
) -> BenchReport:
    """Two-day per-unit sum: dictionary aggregation vs sumBSI."""
    days = [metric_rows(units, density, cap=cap, seed=seed + d) for d in range(2)]
    bsis = [encode_presorted(r) for r in days]
    columns = [(r.positions, r.values) for r in days]
    expected = hash_aggregate_sum(columns)
    got = add(*bsis)
    pos, val = got.to_arrays()
    if dict(zip(pos.tolist(), val.tolist())) != expected:
        raise BenchMismatchError("sumBSI disagrees with the row aggregation")
    report = BenchReport("compute", sum(len(r) for r in days), runs)
    report.measures.append(
        Measure(
            "sum_2day",
            "s",
            median_time(lambda: hash_aggregate_sum(columns), runs),
            median_time(lambda: add(*bsis), runs),
        )
    )
    return report


def bench_encode(units: int, density: float = 0.6, cap: int = 100, seed: int = 0, runs: int = 5, **_) -> BenchReport:
    """Normal side is the straightforward encoder, BSI side the presorted one."""
    rows = metric_rows(units, density, cap=cap, seed=seed)
    if encode_straightforward(rows).to_bytes() != encode_presorted(rows).to_bytes():
        raise BenchMismatchError("encoders disagree")
    report = BenchReport("encode", len(rows), runs)
    report.measures.append(
        Measure(
            "encode",
            "s",
            median_time(lambda: encode_straightforward(rows), runs),
            median_time(lambda: encode_presorted(rows), runs),
        )
    )
    return report


def bench_decode(units: int, density: float = 0.6, cap: int = 1, seed: int = 0, runs: int = 5, **_) -> BenchReport:
    """Normal side is straightforward decoding, BSI side per-bitmap decoding.

    The default ``cap=1`` gives dense binary values, like an active-user flag.
    """
    rows = metric_rows(units, density, cap=cap, seed=seed)
    bsi = encode_presorted(rows)
    mask = Bitmap.from_sorted(np.arange(units, dtype=np.int64))
    if decode_straightforward(bsi, mask) != decode_per_bitmap(bsi, mask):
        raise BenchMismatchError("decoders disagree")
    report = BenchReport("decode", len(rows), runs)
    report.measures.append(
        Measure(
            "decode",
            "s",
            median_time(lambda: decode_straightforward(bsi, mask), runs),
            median_time(lambda: decode_per_bitmap(bsi, mask), runs),
        )
    )
    return report


def bench_scorecard(
    units: int, seed: int = 0, runs: int = 5, segments: int = 8, days: int = 7, **_
) -> BenchReport:
    """Multi-day scorecard: row-based reference engine vs BSI engine."""
    from .engine import Engine
    from .generate import SyntheticConfig, generate
    from .model import Catalog, Dataset
    from .reference import ReferenceEngine

    cfg = SyntheticConfig(units=units, metrics=1, days=days, seed=seed, dimensions=False)
    data = generate(cfg)
    catalog = Catalog(n_segments=segments, n_buckets=segments)
    ds = Dataset.from_records(catalog, data.expose, data.metrics)
    ref = ReferenceEngine(catalog, data.expose, data.metrics)
    eng = Engine(ds)
    window = cfg.all_days

    def run_ref():
        return [ref.scorecard(s, "m0", window, "sum") for s in data.strategy_ids]

    def run_bsi():
        return [eng.multi_day_scorecard(s, "m0", window, "sum") for s in data.strategy_ids]

    for (sums, _), bv in zip(run_ref(), run_bsi()):
        if not np.array_equal(sums, bv.sums):
            raise BenchMismatchError("engine disagrees with the reference")
    report = BenchReport("scorecard", len(data.metrics), runs)
    report.measures.append(Measure("scorecard", "s", median_time(run_ref, runs), median_time(run_bsi, runs)))
    return report


RUNNERS: dict[str, Callable[..., BenchReport]] = {
    "storage": bench_storage,
    "compute": bench_compute,
    "encode": bench_encode,
    "decode": bench_decode,
    "scorecard": bench_scorecard,
}


def run(scenario: str, **params) -> BenchReport:
    try:
        runner = RUNNERS[scenario]
    except KeyError:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}") from None
    if params.get("runs", 5) < 5:
        raise ValueError("at least 5 timed runs are required")
    return runner(**params)


def pretty_table(reports: list[BenchReport]) -> str:
    header = ("scenario", "measure", "normal", "bsi", "bsi/normal", "rows", "runs")
    body = []
    for r in reports:
        for m in r.measures:
            fmt = (lambda v: f"{v:,.0f} B") if m.unit == "B" else (lambda v: f"{v * 1e3:,.2f} ms")
            body.append((r.scenario, m.name, fmt(m.normal), fmt(m.bsi), f"{m.ratio:.3f}", f"{r.rows:,}", str(r.runs)))
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)
