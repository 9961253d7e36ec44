"""``bsimetrics`` command line.

Exit status: 0 on success, 1 on data or usage errors, 2 on bad flags
(argparse), 3 when required partitions are missing.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path
from typing import Iterator, Sequence

from . import bench as benchmod
from .analysis import SCORECARD_COLUMNS, scorecard
from .bitmap import BitmapFormatError
from .bsi import BSI, AggKind
from .engine import Agg, Engine, PredicateBindError, PredicateSyntaxError, parse_predicate
from .generate import DIMENSION_HEADER, EXPOSE_HEADER, METRIC_HEADER, SyntheticConfig, describe, generate, write_tsv
from .model import (
    Catalog,
    Dataset,
    DimensionSpec,
    IngestError,
    MissingPartitionError,
    ModelError,
    UnknownDimensionError,
    UnknownStrategyError,
    format_date,
    parse_date,
)
from .stats import StatsError
from .store import (
    MANIFEST,
    Partition,
    Store,
    StoreError,
    decode_block,
    load_manifest,
    partition_key,
)

EXIT_ERROR = 1
EXIT_MISSING = 3
DEFAULT_ROOT = "catalog"
HEADERS = {"expose": EXPOSE_HEADER, "metric": METRIC_HEADER, "dimension": DIMENSION_HEADER}


class CliError(Exception):
    pass


def _out(line: str = "") -> None:
    sys.stdout.write(line + "\n")


def _warn(msg: str) -> None:
    sys.stderr.write(f"warning: {msg}\n")


def _tsv(rows: Sequence[Sequence]) -> None:
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerows(rows)


# ---------------------------------------------------------------------------
# configuration

def read_config(path: str | None) -> dict[str, str]:
    """TSV ``key<TAB>value`` lines; ``#`` starts a comment."""
    if not path:
        return {}
    conf = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, value = line.partition("\t")
            if not sep:
                raise CliError(f"{path}:{n}: expected key<TAB>value")
            conf[key.strip()] = value.strip()
    return conf


def _root(args) -> Path:
    return Path(args.root or os.environ.get("BSIMETRICS_ROOT") or args.conf.get("root") or DEFAULT_ROOT)


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(args.conf.get("threads", os.cpu_count() or 1))


def _date_arg(text: str) -> int:
    try:
        return parse_date(text)
    except (ModelError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _range_arg(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError("expected FIRST:LAST dates")
    a, b = _date_arg(lo), _date_arg(hi)
    if a > b:
        raise argparse.ArgumentTypeError("range start is after its end")
    return a, b


def _name_int(text: str) -> tuple[str, int]:
    name, sep, value = text.rpartition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError("expected NAME=INTEGER")
    return name, int(value)


def _csv_list(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _days(args) -> list[int]:
    if args.range:
        lo, hi = args.range
        return list(range(lo, hi + 1))
    return [args.date]


# ---------------------------------------------------------------------------
# init / ingest

def cmd_init(args) -> int:
    conf = args.conf
    segments = args.segments or int(conf.get("segments", 1024))
    buckets = args.buckets or int(conf.get("buckets", segments))
    catalog = Catalog(n_segments=segments, n_buckets=buckets, shared_bucketing=args.shared_bucketing)
    for name in args.categorical + _csv_list(conf.get("categorical", "")):
        catalog.dimensions[name] = DimensionSpec(categorical=True)
    for name, scale in args.dimension_scale:
        catalog.dimensions[name] = DimensionSpec(scale=scale)
    for name, scale in args.metric_scale:
        catalog.metric_scales[name] = scale
    root = _root(args)
    Store.create(root, catalog, overwrite=args.force)
    _out(f"initialized {root} with {segments} segments and {buckets} buckets")
    return 0


def _read_records(kind: str, path: str) -> Iterator[tuple[int, tuple]]:
    """Yield ``(line_number, record)`` in the model's record shape."""
    header = HEADERS[kind]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        first = next(reader, None)
        if first is None:
            return
        if tuple(first) != header:
            raise IngestError(f"line 1: expected header {'/'.join(header)}, got {'/'.join(first)}")
        for n, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"line {n}: expected {len(header)} fields, got {len(row)}")
            try:
                if kind == "expose":
                    rec = (row[0], row[1].encode(), row[2].encode(), parse_date(row[3]))
                else:
                    rec = (row[1], parse_date(row[0]), row[2].encode(), row[3])
            except (ModelError, ValueError) as exc:
                raise IngestError(f"line {n}: {exc}") from None
            if not all(row):
                raise IngestError(f"line {n}: empty field")
            yield n, rec


def cmd_ingest(args) -> int:
    store = Store.open(_root(args))
    try:
        numbered = list(_read_records(args.kind, args.input))
    except IngestError as exc:
        raise IngestError(f"{args.input}: {exc}") from None
    lines = [n for n, _ in numbered]
    records = [r for _, r in numbered]
    if not records:
        _warn(f"{args.input} has no rows; nothing written")
        _out("rows\t0\ndropped_zero\t0\npartitions\t0")
        return 0
    ds = Dataset(store.catalog, store.load_encoder())
    try:
        if args.kind == "expose":
            tables = ds.add_expose(records)
            parts = [Partition("expose", s, dict(t.segments)) for s, t in sorted(tables.items())]
            rows, dropped = len(records), 0
        else:
            stats = ds.add_metrics(records) if args.kind == "metric" else ds.add_dimensions(records)
            tables = ds.metrics if args.kind == "metric" else ds.dimensions
            parts = [
                Partition(args.kind, partition_key(name, day), segs)
                for name, t in sorted(tables.items())
                for day, segs in sorted(t.partitions.items())
            ]
            rows, dropped = stats.rows, stats.dropped_zero
    except IngestError as exc:
        line = lines[exc.index] if exc.index is not None else "?"
        raise IngestError(f"{args.input}: line {line}: {exc.reason}") from None
    for p in parts:
        if store.has_partition(p.kind, p.key):
            _warn(f"replacing {p.kind}/{p.key}")
        store.write_partition(p, args.codec, commit=False)
        if p.kind != "expose" and not p.segments:
            _warn(f"{p.kind}/{p.key} is empty")
    store.write_positions(ds.encoder, args.codec, commit=False)
    store.commit()
    _out(f"rows\t{rows}\ndropped_zero\t{dropped}\npartitions\t{len(parts)}")
    return 0


# ---------------------------------------------------------------------------
# queries

def _engine(args) -> Engine:
    return Engine(Store.open(_root(args)).dataset(), threads=_threads(args))


def cmd_scorecard(args) -> int:
    eng = _engine(args)
    strategies = args.strategies or eng.data.strategies()
    if args.control not in strategies:
        strategies = [args.control, *strategies]
    where = parse_predicate(args.where) if args.where else None
    rows = scorecard(eng, strategies, args.control, args.metrics, _days(args), args.agg, where, args.cuped)
    records = [r.record() for r in rows]
    _tsv([SCORECARD_COLUMNS, *records])
    if args.out:
        from .report import scorecard_figure, write_tsv as write_table

        out = Path(args.out)
        write_table(out / "scorecard.tsv", SCORECARD_COLUMNS, records)
        scorecard_figure(rows, out / "scorecard.png")
    return 0


def cmd_precompute(args) -> int:
    eng = _engine(args)
    lo, hi = args.range
    tree = eng.preagg_tree(args.metric, lo, hi, args.kind)
    _tsv([("first_date", "last_date", "slices_max", "bytes")])
    for (start, length), node in sorted(tree.nodes.items()):
        first = tree.first + start
        width = max((b.width for b in node.values()), default=0)
        _tsv([(format_date(first), format_date(first + length - 1), width, sum(b.nbytes for b in node.values()))])
    if args.query:
        q_lo, q_hi = args.query
        spans = tree.decompose(q_lo, q_hi)
        _out("# query " + " ".join(f"{format_date(a)}-{format_date(b)}" for a, b in spans))
    return 0


def cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        units=args.units,
        metrics=args.metrics,
        days=args.days,
        pre_days=args.pre_days,
        strategies=args.strategies,
        alpha=args.alpha,
        cap=args.cap,
        density=args.density,
        exposure=args.exposure,
        start=int(format_date(args.start)),
        seed=args.seed,
        dimensions=not args.no_dimensions,
    )
    paths = write_tsv(generate(cfg), args.out)
    with open(Path(args.out) / "config.tsv", "w", encoding="utf-8") as fh:
        fh.write("# catalog settings for the generated logs\ncategorical\tclient-type\n")
    _out(describe(cfg))
    for name, path in paths.items():
        _out(f"{name}\t{path}")
    return 0


def cmd_bench(args) -> int:
    params = {"units": args.units, "runs": args.runs, "seed": args.seed}
    if args.cap is not None:
        params["cap"] = args.cap
    if args.density is not None:
        params["density"] = args.density
    reports = [benchmod.run(s, **params) for s in args.scenarios]
    records = [rec for r in reports for rec in r.records()]
    if args.tsv:
        _tsv([benchmod.REPORT_COLUMNS, *records])
    else:
        _out(benchmod.pretty_table(reports))
    if args.out:
        from .report import bench_figure, write_tsv as write_table

        out = Path(args.out)
        write_table(out / "bench.tsv", benchmod.REPORT_COLUMNS, records)
        bench_figure(reports, out / "bench.png")
    return 0


# ---------------------------------------------------------------------------
# inspect

def bsi_stats(bsi: BSI) -> list[tuple]:
    """Per slice: index, cardinality, array containers, bitset containers, bytes."""
    out = []
    for i, s in enumerate(bsi.slices):
        kinds = [kind for _, kind, _ in s.container_stats()]
        out.append((i, len(s), kinds.count("array"), kinds.count("bitset"), len(s.to_bytes())))
    return out


def _print_bsi(label: str, bsi: BSI) -> None:
    _out(f"# {label}: {bsi.width} slices, {bsi.count()} positions, sum {bsi.sum()}, {len(bsi.to_bytes())} bytes")
    _tsv([("slice", "cardinality", "array", "bitset", "bytes"), *bsi_stats(bsi)])


def _find_entry(path: Path):
    for parent in path.parents:
        if (parent / MANIFEST).exists():
            store = Store(parent, load_manifest(parent))
            rel = path.relative_to(parent).as_posix()
            for blocks in store.manifest.blocks.values():
                for entry in blocks.values():
                    if entry.relpath() == rel:
                        return store, entry
            return None
    return None


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        store = Store.open(path)
        c = store.catalog
        _out(f"# {c.n_segments} segments, {c.n_buckets} buckets, {store.nbytes()} block bytes")
        rows = [("kind", "key", "blocks", "bytes")]
        for kind, key in sorted(store.manifest.partitions):
            blocks = store.manifest.blocks.get((kind, key), {})
            rows.append((kind, key, len(blocks), sum(b.size for b in blocks.values())))
        _tsv(rows)
        return 0
    found = _find_entry(path.resolve())
    if found is not None:
        store, entry = found
        obj = store.read_block(entry)
        kind = entry.kind
    else:
        kind = "expose" if path.parent.parent.name == "expose" else "metric"
        obj = decode_block(kind, path.read_bytes())
    if kind == "expose":
        _out(f"# min expose date {format_date(obj.min_expose_date)}")
        _print_bsi("offset", obj.offset)
        _print_bsi("bucket code", obj.bucket)
    elif kind == "positions":
        _out(f"# {len(obj)} unit ids")
    else:
        _print_bsi(path.name, obj)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", default=argparse.SUPPRESS, help="catalog directory (env BSIMETRICS_ROOT)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="TSV key-value config file")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="engine worker threads")

    p = argparse.ArgumentParser(prog="bsimetrics", description="Experiment metrics over bit-sliced indexes.")
    p.add_argument("--root", default=None, help="catalog directory (env BSIMETRICS_ROOT)")
    p.add_argument("--config", default=None, help="TSV key-value config file")
    p.add_argument("--threads", type=int, default=None, help="engine worker threads (default: all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", parents=[common], help="create an empty catalog")
    s.add_argument("--segments", type=int)
    s.add_argument("--buckets", type=int)
    s.add_argument("--shared-bucketing", action="store_true", help="buckets reuse the segment hash")
    s.add_argument("--categorical", action="append", default=[], metavar="NAME")
    s.add_argument("--dimension-scale", action="append", default=[], type=_name_int, metavar="NAME=SCALE")
    s.add_argument("--metric-scale", action="append", default=[], type=_name_int, metavar="NAME=SCALE")
    s.add_argument("--force", action="store_true", help="overwrite an existing manifest")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("ingest", parents=[common], help="load a TSV log into the catalog")
    s.add_argument("kind", choices=tuple(HEADERS))
    s.add_argument("input")
    s.add_argument("--codec", choices=("raw", "zlib"), default="raw")
    s.set_defaults(func=cmd_ingest)

    for name, helptext in (("scorecard", "metric table with tests against a control"),
                           ("deepdive", "scorecard restricted by a dimension filter")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--control", required=True)
        s.add_argument("--strategies", type=_csv_list, default=None)
        s.add_argument("--metrics", type=_csv_list, required=True)
        when = s.add_mutually_exclusive_group(required=True)
        when.add_argument("--date", type=_date_arg)
        when.add_argument("--range", type=_range_arg, metavar="FIRST:LAST")
        s.add_argument("--agg", choices=[a.value for a in Agg], default="sum")
        s.add_argument("--where", required=name == "deepdive", help='e.g. "client-type = ios AND client-version > 134"')
        s.add_argument("--cuped", type=int, default=0, metavar="DAYS", help="pre-period length for CUPED")
        s.add_argument("--out", help="directory for scorecard.tsv and scorecard.png")
        s.set_defaults(func=cmd_scorecard)

    s = sub.add_parser("precompute", parents=[common], help="build a pre-aggregate tree over dates")
    s.add_argument("--metric", required=True)
    s.add_argument("--range", type=_range_arg, required=True, metavar="FIRST:LAST")
    s.add_argument("--kind", choices=[k.value for k in AggKind], default=AggKind.SUM.value)
    s.add_argument("--query", type=_range_arg, metavar="FIRST:LAST", help="show the nodes this range merges")
    s.set_defaults(func=cmd_precompute)

    s = sub.add_parser("generate", parents=[common], help="write seeded synthetic logs")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--units", type=int, default=10_000)
    s.add_argument("--metrics", type=int, default=5)
    s.add_argument("--days", type=int, default=7)
    s.add_argument("--pre-days", type=int, default=0)
    s.add_argument("--strategies", type=int, default=3)
    s.add_argument("--alpha", type=float, default=1.16)
    s.add_argument("--cap", type=int, default=100)
    s.add_argument("--density", type=float, default=0.6)
    s.add_argument("--exposure", type=float, default=0.9)
    s.add_argument("--start", type=_date_arg, default=parse_date(20240201))
    s.add_argument("--no-dimensions", action="store_true")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("bench", parents=[common], help="row format vs BSI benchmarks")
    s.add_argument("scenarios", nargs="+", choices=benchmod.SCENARIOS)
    s.add_argument("--units", type=int, default=100_000)
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cap", type=int)
    s.add_argument("--density", type=float)
    s.add_argument("--tsv", action="store_true", help="print TSV instead of the table")
    s.add_argument("--out", help="directory for bench.tsv and bench.png")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect", parents=[common], help="show BSI or catalog statistics")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.conf = read_config(args.config)
        return args.func(args)
    except MissingPartitionError as exc:
        sys.stderr.write("error: missing partitions:\n")
        for name in exc.partitions:
            sys.stderr.write(f"  {name}\n")
        return EXIT_MISSING
    except (UnknownStrategyError, UnknownDimensionError) as exc:
        sys.stderr.write(f"error: unknown {type(exc).__name__[7:-5].lower()} {exc.args[0]}\n")
        return EXIT_ERROR
    except (
        CliError,
        ModelError,
        StoreError,
        StatsError,
        BitmapFormatError,
        PredicateSyntaxError,
        PredicateBindError,
        OSError,
        ValueError,
    ) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
