import numpy as np
import pytest

from bsimetrics.generate import SyntheticConfig, generate
from bsimetrics.model import Dataset
from bsimetrics.reference import ReferenceEngine
from oracles import small_catalog


@pytest.fixture(scope="session")
def synthetic():
    """Small seeded experiment: 3000 units, 5 metrics, 2 pre-days + 5 days."""
    cfg = SyntheticConfig(units=3000, days=5, pre_days=2, seed=11)
    data = generate(cfg)
    cat = small_catalog()
    ds = Dataset.from_records(cat, data.expose, data.metrics, data.dimensions)
    ref = ReferenceEngine(cat, data.expose, data.metrics, data.dimensions)
    return cfg, data, ds, ref


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary --------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line in the terminal summary.
# ``record_property("measured", text)`` adds the measured numbers to that line.

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    n, title = mark.args
    item.config.stash[_CRITERIA][n] = (title, rep.passed, measured)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, measured = results[n]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
