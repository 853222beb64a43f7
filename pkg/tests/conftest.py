import numpy as np
import pytest

from hodgelab import ComplexOperator, InnerProductSpace

ACCEPTANCE_LINES = []


def spd(rng, n, cond=10.0):
    """Random dense SPD matrix with eigenvalues in [1, cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (q * lam) @ q.T


def random_pair(rng, n0, n1, n2, r1, dense_metric=True):
    """Random complex ``H0 -A0-> H1 -A1-> H2`` with rank(A1) = r1.

    A0 maps into N(A1), so the product vanishes up to roundoff.
    """
    def space(n):
        return InnerProductSpace(spd(rng, n) if dense_metric else np.diag(rng.uniform(0.5, 2, n)))

    h0, h1, h2 = space(n0), space(n1), space(n2)
    a1 = rng.standard_normal((n2, r1)) @ rng.standard_normal((r1, n1))
    kern = np.linalg.svd(a1)[2][r1:].T
    a0 = kern @ rng.standard_normal((kern.shape[1], n0))
    return ComplexOperator(a0, h0, h1, name="A0"), ComplexOperator(a1, h1, h2, name="A1")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
