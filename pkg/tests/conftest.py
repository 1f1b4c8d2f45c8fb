import numpy as np
import pytest

from coopmi.config import resolve_config
from coopmi.sensors import Sensors


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    """Keep sensor pretraining caches of unit tests out of the user's home."""
    monkeypatch.setenv("COOPMI_CACHE", str(tmp_path / "cache"))


@pytest.fixture(scope="session")
def untrained_sensors():
    return Sensors.untrained(0)


@pytest.fixture
def smoke_cfg():
    return resolve_config("smoke")


def params_equal(a, b):
    return all(np.array_equal(p.value, b[name].value) for name, p in a)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        passed, detail, secs = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  ({secs:.1f} s)  {detail}")
