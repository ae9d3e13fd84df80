import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thavolt.features import DataSet, SystemConfig
from thavolt.synth import generate

settings.register_profile(
    "default", max_examples=30, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return SystemConfig(p=2, M=2, d=2, l=2)  # q=5, Q=25


@pytest.fixture
def small_data(rng, small_cfg):
    return DataSet(rng.standard_normal((60, 2)), rng.standard_normal((60, 2)))


@pytest.fixture(scope="session")
def ref_cfg():
    return SystemConfig(p=6, M=2, d=2, l=2)


@pytest.fixture(scope="session")
def ref_bench(ref_cfg):
    return generate(ref_cfg, {"train": 2000, "val": 500}, ranks=(2,), snr_db=20, seed=7)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
