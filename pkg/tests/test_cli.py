from collections import defaultdict

import pytest

from bsimetrics.cli import build_parser, main
from bsimetrics.generate import SyntheticConfig, generate, write_tsv
from bsimetrics.model import format_date
from bsimetrics.store import Store, partition_key

COMMANDS = ("init", "ingest", "scorecard", "deepdive", "precompute", "generate", "bench", "inspect")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(path, header, rows):
    path.write_text("\n".join("\t".join(map(str, r)) for r in [header, *rows]) + "\n")
    return path


def tsv_records(text):
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    head, *body = [l.split("\t") for l in lines]
    return [dict(zip(head, r)) for r in body]


EXPOSE = ("strategy-id", "analysis-unit-id", "randomization-unit-id", "first-expose-date")
METRIC = ("date", "metric-id", "analysis-unit-id", "value")


@pytest.fixture
def root(tmp_path, capsys):
    r = tmp_path / "cat"
    assert run(capsys, "init", "--root", r, "--segments", 4, "--buckets", 8)[0] == 0
    return r


def test_three_row_metric_ingest(tmp_path, root, capsys):
    src = write(tmp_path / "m.tsv", METRIC, [(20240201, "rev", "a", 3), (20240201, "rev", "b", 5), (20240201, "rev", "c", 7)])
    code, out, _ = run(capsys, "ingest", "metric", src, "--root", root)
    assert code == 0 and "rows\t3" in out
    store = Store.open(root)
    key = partition_key("rev", 19754)
    values = [v for b in store.read_partition("metric", key).segments.values() for v in b.to_dict().values()]
    assert sorted(values) == [3, 5, 7]


def test_duplicate_row_reports_line(tmp_path, root, capsys):
    src = write(tmp_path / "m.tsv", METRIC, [(20240201, "rev", "a", 3), (20240201, "rev", "b", 5), (20240201, "rev", "a", 1)])
    code, _, err = run(capsys, "ingest", "metric", src, "--root", root)
    assert code == 1
    assert "line 4" in err and "duplicate" in err
    assert Store.open(root).partition_keys("metric") == []


def test_bad_header_and_bad_value(tmp_path, root, capsys):
    src = write(tmp_path / "m.tsv", ("date", "metric", "unit", "value"), [])
    assert "line 1" in run(capsys, "ingest", "metric", src, "--root", root)[2]
    src = write(tmp_path / "m2.tsv", METRIC, [(20240201, "rev", "a", 3), (20241301, "rev", "b", 1)])
    code, _, err = run(capsys, "ingest", "metric", src, "--root", root)
    assert code == 1 and "line 3" in err


def test_empty_file_warns(tmp_path, root, capsys):
    src = tmp_path / "empty.tsv"
    src.write_text("")
    code, out, err = run(capsys, "ingest", "metric", src, "--root", root)
    assert code == 0 and "no rows" in err and "rows\t0" in out


def test_zero_values_dropped(tmp_path, root, capsys):
    src = write(tmp_path / "m.tsv", METRIC, [(20240201, "rev", "a", 0), (20240201, "rev", "b", 2)])
    out = run(capsys, "ingest", "metric", src, "--root", root)[1]
    assert "rows\t2" in out and "dropped_zero\t1" in out


def aa_catalog(tmp_path, root, capsys):
    units = [f"u{i}" for i in range(200)]
    rows = [(s, u, u, 20240201) for s in ("A", "B") for u in units]
    run(capsys, "ingest", "expose", write(tmp_path / "e.tsv", EXPOSE, rows), "--root", root)
    vals = [(20240201, "rev", u, 1 + (i * 7919) % 13) for i, u in enumerate(units)]
    run(capsys, "ingest", "metric", write(tmp_path / "m.tsv", METRIC, vals), "--root", root)


def test_aa_on_cloned_strategy(tmp_path, root, capsys):
    aa_catalog(tmp_path, root, capsys)
    code, out, _ = run(capsys, "scorecard", "--root", root, "--control", "A", "--metrics", "rev", "--date", 20240201)
    assert code == 0
    rows = {r["strategy"]: r for r in tsv_records(out)}
    assert float(rows["B"]["delta"]) == 0.0
    assert float(rows["B"]["p"]) == 1.0
    assert rows["A"]["units"] == rows["B"]["units"] == "200"


def test_missing_partition_exit_code(tmp_path, root, capsys):
    aa_catalog(tmp_path, root, capsys)
    code, _, err = run(capsys, "scorecard", "--root", root, "--control", "A", "--metrics", "rev", "--range", "20240201:20240203")
    assert code == 3
    assert "metric/rev@20240202" in err and "metric/rev@20240203" in err


def test_unknown_strategy(tmp_path, root, capsys):
    aa_catalog(tmp_path, root, capsys)
    code, _, err = run(capsys, "scorecard", "--root", root, "--control", "Z", "--metrics", "rev", "--date", 20240201)
    assert code == 1 and "Z" in err


def test_generate_is_deterministic(tmp_path, capsys):
    for name in ("a", "b", "c"):
        seed = 3 if name != "c" else 4
        assert run(capsys, "generate", "--seed", seed, "--out", tmp_path / name, "--units", 100, "--days", 2)[0] == 0
    a, b, c = ((tmp_path / n / "metric.tsv").read_bytes() for n in "abc")
    assert a == b and a != c


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main([cmd, "--help"])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_and_command(capsys):
    for argv in (["init", "--bogus"], ["frobnicate"], []):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2


def test_global_options_either_side(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("BSIMETRICS_ROOT", raising=False)
    assert run(capsys, "--root", tmp_path / "x", "init", "--segments", 2)[0] == 0
    assert (tmp_path / "x" / "manifest.tsv").exists()
    monkeypatch.setenv("BSIMETRICS_ROOT", str(tmp_path / "y"))
    assert run(capsys, "init", "--segments", 2)[0] == 0
    assert (tmp_path / "y" / "manifest.tsv").exists()
    assert run(capsys, "init", "--segments", 2)[0] == 1


def test_inspect_block(tmp_path, root, capsys):
    values = [(20240201, "rev", f"u{i}", (i * 37) % 1000 + 1) for i in range(500)]
    run(capsys, "ingest", "metric", write(tmp_path / "m.tsv", METRIC, values), "--root", root)
    store = Store.open(root)
    key = partition_key("rev", 19754)
    total = 0
    for seg, entry in store.manifest.blocks[("metric", key)].items():
        out = run(capsys, "inspect", root / entry.relpath())[1]
        slices = tsv_records(out)
        claimed = sum(int(r["cardinality"]) << int(r["slice"]) for r in slices)
        assert claimed == sum(store.read_segment("metric", key, seg).to_dict().values())
        assert f"sum {claimed}" in out
        total += claimed
    assert total == sum(v for *_, v in values)
    assert "metric\trev@20240201" in run(capsys, "inspect", root)[1]


def test_inspect_empty_bsi(tmp_path, capsys):
    from bsimetrics.bsi import EMPTY_BSI

    path = tmp_path / "seg0000.bsi"
    path.write_bytes(EMPTY_BSI.to_bytes())
    out = run(capsys, "inspect", path)[1]
    assert "0 slices" in out and tsv_records(out) == []


def test_precompute(tmp_path, root, capsys):
    rows = [(20240201 + d, "rev", f"u{i}", i + d + 1) for d in range(7) for i in range(20)]
    run(capsys, "ingest", "metric", write(tmp_path / "m.tsv", METRIC, rows), "--root", root)
    code, out, _ = run(capsys, "precompute", "--root", root, "--metric", "rev", "--range", "20240201:20240207", "--query", "20240201:20240207")
    assert code == 0
    assert out.strip().splitlines()[-1] == "# query 20240201-20240204 20240205-20240206 20240207-20240207"


def test_deepdive_matches_oracle(tmp_path, capsys):
    cfg = SyntheticConfig(units=1500, metrics=1, days=3, seed=21)
    data = generate(cfg)
    logs = write_tsv(data, tmp_path / "logs")
    root = tmp_path / "cat"
    assert run(capsys, "init", "--root", root, "--segments", 8, "--categorical", "client-type")[0] == 0
    for kind in ("expose", "metric", "dimension"):
        assert run(capsys, "ingest", kind, logs[kind], "--root", root)[0] == 0
    days = cfg.all_days
    last = days[-1]
    where = "client-type = ios AND client-version > 134"
    code, out, _ = run(
        capsys, "deepdive", "--root", root, "--control", "s0", "--metrics", "m0",
        "--range", f"{format_date(days[0])}:{format_date(last)}", "--where", where, "--out", tmp_path / "dd",
    )
    assert code == 0
    got = {r["strategy"]: r for r in tsv_records(out)}

    # independent oracle straight from the generated records
    dims = defaultdict(dict)
    for name, day, unit, value in data.dimensions:
        if day == last:
            dims[unit][name] = value
    keep = {u for u, d in dims.items() if d["client-type"] == "ios" and d["client-version"] > 134}
    by_day = defaultdict(int)
    for _, day, unit, v in data.metrics:
        by_day[unit, day] += v
    for s in data.strategy_ids:
        exposed = {u: d for st, u, _, d in data.expose if st == s and d <= last and u in keep}
        total = sum(v for (u, day), v in by_day.items() if u in exposed and day >= exposed[u])
        assert int(got[s]["units"]) == len(exposed)
        assert float(got[s]["point"]) == pytest.approx(total / len(exposed), rel=1e-12)
    assert (tmp_path / "dd" / "scorecard.tsv").exists() and (tmp_path / "dd" / "scorecard.png").exists()


def test_config_file(tmp_path, capsys):
    conf = tmp_path / "conf.tsv"
    conf.write_text(f"root\t{tmp_path / 'c'}\nsegments\t16\ncategorical\tclient-type\n")
    assert run(capsys, "--config", conf, "init")[0] == 0
    cat = Store.open(tmp_path / "c").catalog
    assert cat.n_segments == 16 and cat.dimensions["client-type"].categorical


def test_parser_lists_every_command():
    text = build_parser().format_help()
    assert all(c in text for c in COMMANDS)
