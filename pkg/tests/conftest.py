import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

L1 = 850e-9
C1 = (1 / 3, 0.0)
C2 = (0.0, 1 / 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, shape=(32, 48), pitch=1e-4):
    from swicam.field import ComplexField

    return ComplexField(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), pitch)


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
