import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dgpkern", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dgpkern")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_psd(rng, n, scale=1.0):
    """Random covariance with a spread of eigenvalues (some near zero)."""
    A = rng.normal(size=(n, n))
    Q, _ = np.linalg.qr(A)
    w = scale * rng.uniform(0.0, 2.0, size=n) ** 2
    return (Q * w) @ Q.T


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; printed again in the terminal summary."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
