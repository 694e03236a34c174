import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_admissible_F(rng, spread=0.3):
    """Rotation times an upper-triangular factor with diagonal in (0.5, 1.5)."""
    R = np.triu(rng.uniform(-spread, spread, size=(3, 3)))
    R[np.diag_indices(3)] = rng.uniform(0.5, 1.5, size=3)
    return random_rotation(rng) @ R


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary
# Tests marked ``criterion(n, title)`` are collected into one pass/fail line per
# criterion, printed at the end of the session. ``record_property("detail", ...)``
# attaches the measured numbers.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "ran": False, "detail": []})
    entry["ran"] = entry["ran"] or rep.when == "call"
    entry["ok"] = entry["ok"] and rep.passed
    detail = dict(item.user_properties).get("detail")
    if detail and detail not in entry["detail"]:
        entry["detail"].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        line = f"[{status}] {n:2d}. {e['title']}"
        if e["detail"]:
            line += " | " + "; ".join(e["detail"])
        terminalreporter.write_line(line)
