import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridnet import backend

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=backend.available())
def kernels(request, monkeypatch):
    """Run the test once per available kernel backend."""
    impl = backend.get(request.param)
    monkeypatch.setattr(backend, "kernels", impl)
    return impl


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}
PROXY = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.addinivalue_line("markers", "proxy: stand-in run on the bundled 5K MNIST sample (not a criterion)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("proxy") is not None and rep.when == "call":
        status = "passed" if rep.passed else ("skipped" if rep.skipped else "failed")
        PROXY.append((item.name, status, [p[1] for p in item.user_properties if p[0] == "detail"]))
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    entry = CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
        msg = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        entry["notes"].append(f"{item.name}: {msg.splitlines()[0] if msg else 'failed'}")
    else:
        entry["notes"].extend(p[1] for p in item.user_properties if p[0] == "detail")


def pytest_terminal_summary(terminalreporter):
    if PROXY:
        terminalreporter.section("proxy runs (5K MNIST sample, not acceptance criteria)")
        for name, status, notes in PROXY:
            terminalreporter.write_line(f"{name}: {status}")
            for note in notes:
                terminalreporter.write_line(f"    {note}")
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        e = CRITERIA[n]
        line = f"criterion {n} ({e['title']}): {'PASS' if e['ok'] else 'FAIL'}"
        terminalreporter.write_line(line)
        for note in e["notes"]:
            terminalreporter.write_line(f"    {note}")
