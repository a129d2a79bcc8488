import numpy as np
import pytest

from cfsbayes.dictionary import build_dictionary
from cfsbayes.sensing import gauss_matrix

# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the summary."""

    def record(num, ok, detail):
        ACCEPTANCE[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


@pytest.fixture
def small_problem():
    """(y, A, phi) on an M=20, L=40, N=80 instance with a 3-sparse signal."""
    M, L, N = 20, 40, 80
    A = build_dictionary(1.0, L, N).atoms
    phi = gauss_matrix(M, L, 11).entries
    x = np.zeros(N)
    x[[20, 24, 60]] = 1.0
    rng = np.random.default_rng(5)
    y = phi @ A @ x + 0.05 * rng.standard_normal(M)
    return y, A, phi
