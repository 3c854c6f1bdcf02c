import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vulnassess.assessor import ModelParams
from vulnassess.trainer import Batch

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# -- small random training instances ------------------------------------------------

def random_instance(seed, n=6, D=32, K=8, H=16, zero=False):
    rng = np.random.default_rng(seed)
    p = ModelParams.initialize(seed, D=D, K=K, H=H)
    if not zero:
        p.s = rng.normal(size=K)
        p.W = rng.normal(size=(H, 4))
        p.b = rng.normal(size=4)
        p.U = rng.normal(size=(H, H)) * 0.3
    x = rng.normal(size=(n, D))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    has_ref = rng.random(n) < 0.8
    refs = np.tanh(rng.normal(size=(n, D)) @ p.P[:D]) * has_ref[:, None]
    batch = Batch(base=x @ p.P[:D], labels=rng.integers(0, 4, size=n), refs=refs, has_ref=has_ref)
    return p, batch


# -- acceptance reporting -----------------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "title")`` get one summary line each.

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        prev = _results.get(number)
        if prev is None or prev[0] == "PASS":
            _results[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title = _results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
