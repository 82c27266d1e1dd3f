import numpy as np
import pytest

from replica_access.model import (IsotropicGroup, SystemConfig, reference_correlated,
                                  reference_isotropic)


@pytest.fixture(scope="session")
def iso_ref():
    """Five Rayleigh groups, M=2, 33 dBm, alpha=0.575."""
    return reference_isotropic().build()


@pytest.fixture(scope="session")
def corr_ref():
    """One rank-2 correlated group, M=64, 18 dBm, alpha=0.13."""
    return reference_correlated().build()


def small_iso(variances=(1.0,), M=1, alpha=0.5, rho=0.1, noise_var=0.01, K=200):
    return SystemConfig.from_alpha(alpha=alpha, users_per_group=K,
                                   groups=[IsotropicGroup(v) for v in variances],
                                   n_antennas=M, activity_prob=rho, noise_var=noise_var)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once at the end of the session
ACCEPTANCE = {}


def record(number, name, ok, detail):
    ACCEPTANCE[number] = (name, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {name}: {detail}")
