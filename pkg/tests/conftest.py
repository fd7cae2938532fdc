import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vaemir.data import Bag

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Independent finite-difference oracle (does not touch library code)."""
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f()
        x.flat[i] = old - h
        down = f()
        x.flat[i] = old
        g.flat[i] = (up - down) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def make_bag(instances, label=None, bag_id="b", year=2000, flags=None) -> Bag:
    return Bag(bag_id, year, np.asarray(instances, dtype=float), label, flags)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
