import datetime as dt
from collections import Counter

import numpy as np
import pytest
from scipy import stats as sps

from bsimetrics.model import (
    BUCKET_SALT,
    Catalog,
    Dataset,
    DimensionSpec,
    IngestError,
    ModelError,
    PositionEncoder,
    SegmentMismatchError,
    build_expose,
    build_metric,
    bucket_of,
    fnv1a64,
    format_date,
    parse_date,
    segment_of,
    to_fixed_point,
    unit_hash,
)

IDS = [b"user-%d" % i for i in range(200_000)]


def test_fnv_reference_vectors():
    # published FNV-1a 64 test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_hash_deterministic_and_salted():
    assert segment_of(b"alice") == segment_of(b"alice")
    assert bucket_of(b"alice") == bucket_of(b"alice")
    assert unit_hash(b"alice", BUCKET_SALT) != unit_hash(b"alice")
    with pytest.raises(ModelError):
        segment_of(b"")


def test_segment_uniformity():
    counts = np.bincount([segment_of(i) for i in IDS], minlength=1024)
    assert sps.chisquare(counts).pvalue > 0.001


def test_bucket_uniformity():
    counts = np.bincount([bucket_of(i) for i in IDS], minlength=1024)
    assert sps.chisquare(counts).pvalue > 0.001


def test_segment_bucket_independence():
    table = np.zeros((16, 16))
    for i in IDS:
        table[segment_of(i) % 16, bucket_of(i) % 16] += 1
    assert sps.chi2_contingency(table).pvalue > 0.001
    low = np.zeros((2, 2))
    for i in IDS[:50_000]:
        low[segment_of(i) & 1, bucket_of(i) & 1] += 1
    assert sps.chi2_contingency(low).pvalue > 0.001


def test_shared_bucketing():
    cat = Catalog(n_segments=64, n_buckets=64, shared_bucketing=True)
    assert all(cat.bucket_of(i) == cat.segment_of(i) for i in IDS[:1000])
    with pytest.raises(ModelError):
        Catalog(n_segments=64, n_buckets=32, shared_bucketing=True)


def test_dates():
    assert parse_date(19700101) == 0
    assert parse_date("20240201") == (dt.date(2024, 2, 1) - dt.date(1970, 1, 1)).days
    assert format_date(parse_date(20240229)) == 20240229
    for bad in (19691231, 20240230, "2024-02-01"):
        with pytest.raises(ModelError):
            parse_date(bad)


def test_fixed_point():
    assert to_fixed_point("2.5", 10) == 25
    assert to_fixed_point(2.5, 10) == 25
    assert to_fixed_point("0.25", 10) == 2  # half-even
    assert to_fixed_point(7, 1) == 7
    with pytest.raises(ModelError):
        to_fixed_point("-1", 1)
    with pytest.raises(ModelError):
        to_fixed_point("nan", 1)
    with pytest.raises(ModelError):
        to_fixed_point(1, 3)


def test_position_encoder():
    cat = Catalog(n_segments=4, n_buckets=4)
    enc = PositionEncoder(cat)
    ids = [i for i in IDS[:100] if cat.segment_of(i) == 2][:3]
    assert [enc.encode(2, i) for i in ids] == [0, 1, 2]
    assert enc.encode(2, ids[1]) == 1
    other = next(i for i in IDS if cat.segment_of(i) != 2)
    with pytest.raises(SegmentMismatchError):
        enc.encode(2, other)


def test_position_encoder_bijection():
    cat = Catalog(n_segments=16, n_buckets=16)
    enc = PositionEncoder(cat)
    for i in IDS[:100_000]:
        enc.encode_unit(i)
    total = 0
    for seg in enc.segments():
        ids = enc.ids(seg)
        assert [enc.lookup(seg, u) for u in ids] == list(range(len(ids)))
        total += len(ids)
    assert total == 100_000


def test_priority_preregistration():
    cat = Catalog(n_segments=2, n_buckets=2)
    priority = [b"vip-%d" % i for i in range(10)]
    ds = Dataset.from_records(cat, metrics=[("m", 5, b"x", 1)], priority=priority)
    for seg in (0, 1):
        ids = ds.encoder.ids(seg)
        vips = [u for u in ids if u.startswith(b"vip")]
        assert ids[: len(vips)] == vips


def test_build_expose_offsets():
    cat = Catalog(n_segments=1, n_buckets=8)
    enc = PositionEncoder(cat)
    tables = build_expose([("s", b"a", b"a", 100), ("s", b"b", b"b", 102)], cat, enc)
    seg = tables["s"].segment(0)
    assert seg.min_expose_date == 100
    assert seg.offset.to_dict() == {0: 1, 1: 3}
    assert seg.bucket.to_dict() == {0: cat.bucket_of(b"a") + 1, 1: cat.bucket_of(b"b") + 1}
    assert seg.expose_dates() == {0: 100, 1: 102}


def test_build_expose_round_trip_and_invariants():
    cat = Catalog(n_segments=8, n_buckets=1024)
    enc = PositionEncoder(cat)
    rng = np.random.default_rng(3)
    days = rng.integers(19000, 19010, 10_000)
    recs = [("s", IDS[i], IDS[i], int(days[i])) for i in range(10_000)]
    seg_tables = build_expose(recs, cat, enc)["s"].segments
    want = {IDS[i]: int(days[i]) for i in range(10_000)}
    got = {}
    for s, seg in seg_tables.items():
        assert seg.offset.nonzero() == seg.bucket.nonzero()
        assert seg.offset.min() >= 1
        assert 1 <= seg.bucket.min() and seg.bucket.max() <= 1024
        ids = enc.ids(s)
        for p, day in seg.expose_dates().items():
            got[ids[p]] = day
    assert got == want


def test_build_expose_errors():
    cat = Catalog(n_segments=2, n_buckets=2)
    with pytest.raises(IngestError) as info:
        build_expose([("s", b"a", b"a", 1), ("s", b"a", b"a", 2)], cat, PositionEncoder(cat))
    assert info.value.index == 1
    with pytest.raises(IngestError):
        build_expose([("s", b"a", b"a", -1)], cat, PositionEncoder(cat))


def test_build_metric_scaling_and_zero_drop():
    cat = Catalog(n_segments=1, n_buckets=4, metric_scales={"stay": 10})
    tables, stats = build_metric(
        [("stay", 7, b"a", "2.5"), ("stay", 7, b"b", 0), ("stay", 8, b"b", "0.04")],
        cat,
        PositionEncoder(cat),
    )
    assert tables["stay"].partitions[7][0].to_dict() == {0: 25}
    assert tables["stay"].partitions[8] == {}  # rounds to zero
    assert stats.rows == 3 and stats.dropped_zero == 2


def test_build_metric_errors():
    cat = Catalog(n_segments=1, n_buckets=4)
    with pytest.raises(IngestError) as info:
        build_metric([("m", 1, b"a", 1), ("m", 1, b"a", 2)], cat, PositionEncoder(cat))
    assert info.value.index == 1
    with pytest.raises(IngestError):
        build_metric([("m", 1, b"a", -3)], cat, PositionEncoder(cat))


def test_metric_round_trip_within_quantization(rng):
    cat = Catalog(n_segments=4, n_buckets=4, metric_scales={"t": 100})
    raw = rng.random(100_000) * 50 + 0.01
    recs = [("t", 1, IDS[i], float(raw[i])) for i in range(raw.size)]
    ds = Dataset.from_records(cat, metrics=recs)
    back = {}
    for seg, x in ds.metrics["t"].partitions[1].items():
        ids = ds.encoder.ids(seg)
        for p, v in x.to_dict().items():
            back[ids[p]] = v / 100
    err = max(abs(back.get(IDS[i], 0.0) - raw[i]) for i in range(raw.size))
    assert err <= 1 / 200 + 1e-12


def test_categorical_dimension_codes():
    cat = Catalog(n_segments=1, n_buckets=4, dimensions={"os": DimensionSpec(categorical=True)})
    ds = Dataset.from_records(cat, dimensions=[("os", 1, b"a", "ios"), ("os", 1, b"b", "android"), ("os", 1, b"c", "ios")])
    assert cat.dimensions["os"].codes == {"ios": 1, "android": 2}
    assert ds.dimensions["os"].partitions[1][0].to_dict() == {0: 1, 1: 2, 2: 1}


def test_segment_sizes_balanced():
    cat = Catalog(n_segments=8, n_buckets=8)
    enc = PositionEncoder(cat)
    for i in IDS[:80_000]:
        enc.encode_unit(i)
    sizes = Counter({s: enc.size(s) for s in enc.segments()})
    assert max(sizes.values()) - min(sizes.values()) < 600
