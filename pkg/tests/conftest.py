import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smc2nx.models import LinearGaussian, StochasticVolatility, simulate  # noqa: E402


@pytest.fixture
def lgssm():
    return LinearGaussian(0.9, 1.0, 0.5)


@pytest.fixture
def sv():
    return StochasticVolatility()


@pytest.fixture
def lgssm_data(lgssm):
    _, y = simulate(lgssm, lgssm.theta0, 9, np.random.default_rng(7))
    return y


@pytest.fixture
def sv_data(sv):
    _, y = simulate(sv, np.array([-1.0, 0.9, 0.1]), 30, np.random.default_rng(3))
    return y


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        ok, detail = results[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")
