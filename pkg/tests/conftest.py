import numpy as np
import pytest

from deeplcc.data import collect_offline
from deeplcc.traffic import TABLE_HETEROGENEOUS, MixedConfig


@pytest.fixture(scope="session")
def default_cfg():
    return MixedConfig(8, (3, 6))


@pytest.fixture(scope="session")
def hetero_cfg():
    return MixedConfig(8, (3, 6), TABLE_HETEROGENEOUS)


@pytest.fixture(scope="session")
def default_dataset(default_cfg):
    return collect_offline(default_cfg, 15.0, 800, seed=0)


@pytest.fixture(scope="session")
def linear_dataset(default_cfg):
    return collect_offline(default_cfg, 15.0, 800, seed=3, plant="linear",
                           hdv_noise=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""
    def _report(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        ACCEPTANCE_LINES.append((k, line))
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)
