import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hypersmc.hyper import HyperPrior  # noqa: E402
from hypersmc.models.toy import generate_toy_data  # noqa: E402
from hypersmc.smc import TemperingSchedule, run_sampler  # noqa: E402

TOY_THETA_STAR = 0.05
TOY_THETA_MAX = 10.0
TOY_ALPHA1 = (TOY_THETA_STAR / TOY_THETA_MAX) ** 2

_criteria = {}


def toy_prior():
    return HyperPrior.gamma(2.0, 4 * TOY_THETA_STAR, (TOY_THETA_STAR, TOY_THETA_MAX))


def toy_schedule(n_iterations=500):
    return TemperingSchedule.geometric(n_iterations, TOY_ALPHA1)


@pytest.fixture(scope="session")
def toy_data():
    model, truth = generate_toy_data(2024)
    return model, truth


@pytest.fixture(scope="session")
def toy_trace(toy_data):
    model, _ = toy_data
    return run_sampler(model, toy_schedule(), 100, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    failed = report.failed
    if report.when == "call" or failed:
        prev = _criteria.get(crit, True)
        _criteria[crit] = prev and not failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria):
        status = "PASS" if _criteria[crit] else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {status}")
