import numpy as np
import pytest

from falcon_pi.he import HEParams, keygen


@pytest.fixture(scope="session")
def he_params():
    return HEParams()


@pytest.fixture(scope="session")
def keys(he_params):
    return keygen(he_params, b"test-keys")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one line per criterion at the end of the run

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.skipped and rep.passed):
        return
    number, text = mark.args
    state = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
    if rep.when == "call" or state != "PASS":
        prev = _CRITERIA.get(number, (state, text))[0]
        if prev == "FAIL":
            state = "FAIL"
        _CRITERIA[number] = (state, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        state, text = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {state}  {text}")
