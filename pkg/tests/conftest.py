import numpy as np
import pytest

from transnoise.states import ModelParams

# Acceptance outcomes recorded by test_acceptance.py, printed at session end.
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return ok


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def params():
    return ModelParams(omega=1.0, gamma=0.5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
