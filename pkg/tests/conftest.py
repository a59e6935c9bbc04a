import numpy as np
import pytest

from dynpanel.dgp import DgpConfig, EtaLaw, InitRegime, simulate
from dynpanel.kernels import build_model_matrices


def expected_W(rho, sigma2, omega2, T, N):
    """N * E[Y'Y/N] for zero-initial data: the plug-in oracle for limiting objects."""
    B = build_model_matrices(rho, T).B
    one = np.ones(T)
    return N * sigma2 * B @ (omega2 * np.outer(one, one) + np.eye(T)) @ B.T


@pytest.fixture
def canonical_panel():
    return simulate(DgpConfig(0.5, 1.0, 400, 4, EtaLaw(omega2=1.0), seed=101))


@pytest.fixture
def fixed_y1_panel():
    return simulate(
        DgpConfig(0.5, 1.0, 400, 4, EtaLaw(kind="iid-normal", mean=0.9, var=1.0),
                  InitRegime(kind="fixed-constant", k=1.0), seed=102)
    )


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; printed again in the terminal summary."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
