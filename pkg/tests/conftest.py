import numpy as np
import pytest

from measure_heat import CoefficientField, MeasureData, build_mesh

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    def log(number: int, ok: bool, message: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {message}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def unit_mesh():
    return build_mesh(1, [1.0], [4])


@pytest.fixture
def unit_coef():
    return CoefficientField.scalar(1.0)


@pytest.fixture
def center_dirac():
    return MeasureData.dirac(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)
