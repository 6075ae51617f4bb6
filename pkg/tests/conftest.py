import numpy as np
import pytest

from tailbench.dataio import gen_gaussian_synthetic, make_dataset, spectral


@pytest.fixture(scope="session")
def small_ds():
    X, b = gen_gaussian_synthetic(120, 6, seed=7)
    return make_dataset(X, b)


@pytest.fixture(scope="session")
def small_spec(small_ds):
    return spectral(small_ds, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(number, check):
        line = f"criterion {number:2d}: {'PASS' if check.passed else 'FAIL'}  {check.line()}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return check
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
