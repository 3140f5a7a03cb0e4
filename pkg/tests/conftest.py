import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ibnrcox.em.common import ConvergenceWarning
from ibnrcox.synthetic import ScenarioConfig, simulate_dataset

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_mm_dataset():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return simulate_dataset(ScenarioConfig(m=120, T=30, seed=7))


@pytest.fixture(scope="session")
def small_ll_dataset():
    return simulate_dataset(ScenarioConfig(m=120, T=30, seed=8, delay="loglogistic"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.get_closest_marker("acceptance"):
        doc = (item.function.__doc__ or "").strip().splitlines()
        report.user_properties.append(("criterion", (item.name, doc[0] if doc else "")))


def pytest_terminal_summary(terminalreporter):
    rows = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "criterion":
                    rows.append((value[0], value[1], key))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for test_name, desc, key in sorted(rows):
        number = int(test_name.split("_")[2])
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if key == 'passed' else 'FAIL'} - {desc}")
