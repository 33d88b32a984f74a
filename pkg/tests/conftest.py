import numpy as np
import pytest

from robustjet.data import Dataset, default_schema
from robustjet.synth import SynthConfig, make_synthetic


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def small_ds():
    return make_synthetic(SynthConfig(n=200, seed=3))


@pytest.fixture
def rand_ds(schema):
    def make(n, seed=0):
        g = np.random.default_rng(seed)
        return Dataset(schema, g.normal(size=(n, 87)), g.integers(0, 2, n))
    return make


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, name, ok, detail=""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
