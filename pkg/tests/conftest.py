import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "glqk", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("glqk")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- dense-matrix oracles shared by several test modules ----

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def dense_pauli(n, letters):
    """Full 2^n matrix of a Pauli string given as {site: letter}; site 0 is leftmost."""
    m = np.ones((1, 1), dtype=complex)
    for i in range(n):
        m = np.kron(m, PAULI[letters.get(i, "I")])
    return m


def dense_expectation(psi, n, letters):
    return float(np.real(np.conj(psi) @ dense_pauli(n, letters) @ psi))
