import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kbures.measures import GridSpec, MatrixMeasure, synth_measure

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, k, floor=0.1, batch=()):
    A = rng.normal(size=batch + (k, k))
    return A @ np.swapaxes(A, -1, -2) + floor * np.eye(k)


def random_sym(rng, k, batch=()):
    A = rng.normal(size=batch + (k, k))
    return 0.5 * (A + np.swapaxes(A, -1, -2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def line():
    return GridSpec(1, 16)


@pytest.fixture
def plane():
    return GridSpec(2, 4)


@pytest.fixture
def random_pair_1d():
    def make(seed, n=16):
        g = GridSpec(1, n)
        a = synth_measure(g, "random", seed=seed, amplitude=1.5, floor=0.1)
        b = synth_measure(g, "random", seed=seed + 1000, amplitude=1.5, floor=0.1)
        return a, b

    return make


def as_measure(grid, values):
    return MatrixMeasure(grid, values)


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE.setdefault(number, []).append((passed, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[number]
        ok = all(passed for passed, _ in entries)
        details = "; ".join(line.split(" - ", 1)[1] for _, line in entries)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} - {details}")
