import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pvcluster import ingest, synth  # noqa: E402


def make_table(values, start="2021-01-01T00:00", step=360, ids=None):
    values = np.asarray(values, dtype=float)
    stamps = np.datetime64(start, "m") + np.arange(values.shape[1]) * np.timedelta64(step, "m")
    ids = ids or tuple(f"s{u}" for u in range(values.shape[0]))
    return ingest.RawSeriesTable(stamps, values, tuple(ids))


@pytest.fixture(scope="session")
def small_fleet():
    cfg = synth.SynthConfig(U=24, days=30, groups=3, missing_day_rate=0.1, seed=11)
    table, meta, labels = synth.generate(cfg)
    return table, meta, labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(marker)
        if prev is None or prev == "PASS":
            _acceptance[marker] = "PASS" if report.outcome == "passed" else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        outcome.get_result().acceptance = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_acceptance.items()):
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
