import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, derandomize=True, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("dev", deadline=None, max_examples=20)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        for n in mark.args:
            prev = _acceptance.get(n)
            # a criterion split over several tests passes only if all of them do
            if prev is None or prev[0] == "PASS":
                _acceptance[n] = (status, detail)
            elif detail:
                _acceptance[n] = (prev[0], prev[1] + "; " + detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        status, detail = _acceptance[n]
        terminalreporter.write_line(f"ACCEPTANCE criterion {n:>2}: {status}  {detail}".rstrip())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
