import numpy as np
import pytest

from maxmix.simulation import SiteSet, child_seed, sample_sites_uniform


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def mixed_diff(f, x, y, hx, hy):
    """Central estimate of d^2 f / dx dy."""
    return (f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy)) / (4 * hx * hy)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_sites():
    return sample_sites_uniform(6, 1.0, child_seed(11, 0))


@pytest.fixture
def line_sites():
    """Three collinear planar sites with lags 0.1, 0.2 and 0.3."""
    return SiteSet(np.array([[0.0, 0.0], [0.1, 0.0], [0.3, 0.0]]))


# one PASS/FAIL line per acceptance criterion in the terminal summary
_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")
    config.stash[_ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    entry = item.config.stash[_ACCEPTANCE].setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail" and v not in entry["details"]]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        status = "PASS" if r["ok"] else "FAIL"
        detail = "; ".join(r["details"])
        terminalreporter.write_line(f"criterion {number} {status}: {r['title']}" + (f" [{detail}]" if detail else ""))
