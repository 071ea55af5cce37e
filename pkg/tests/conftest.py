import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def tail_sup(values, alpha, weights=None):
    """Independent CVaR oracle: evaluate the sup objective at every sample value."""
    z = np.asarray(values, dtype=float)
    w = np.full(z.size, 1.0 / z.size) if weights is None else np.asarray(weights, dtype=float)
    neg = np.minimum(z[None, :] - z[:, None], 0.0)
    return float(np.max(z + neg @ w / alpha))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
