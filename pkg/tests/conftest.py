import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rsvolterra.kernels import KernelSpec, fit_soe
from rsvolterra.network import (OperatorSet, build_dissipation, build_excitation, build_graph,
                                laplacian_spectrum)
from rsvolterra.volterra import SystemConfig

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def baseline_soe():
    return fit_soe(KernelSpec.tempered(0.65, 0.35))


def make_scalar_system(a=2.0, beta=1.0, r=1.0, dt=0.01, T=200.0, **kw):
    """n = 1 system with kernel exp(-r t) and excitation ``a``."""
    soe = fit_soe(KernelSpec.exponential_sum([r], [1.0]))
    ops = OperatorSet(build_dissipation(beta, 0.0, n=1), (np.array([[a]]),),
                      (np.zeros((2, 1)),), (a / r,), (1.0 / r,))
    return SystemConfig(ops, (soe,), np.array([[0.0], [1.0]]), dt=dt, T=T, **kw)


def make_network_system(soe, rho=(0.5, 2.2), beta=1.5, kappa=0.0, n=12, seed=0, T=30.0,
                        dt=0.05, mode="commuting", **kw):
    rng = np.random.default_rng(seed)
    g = build_graph("erdos_renyi", n, rng, p=0.3)
    spec = laplacian_spectrum(g)
    A = tuple(build_excitation(spec, r, soe.mass, mode, rng) for r in rho)
    ops = OperatorSet(build_dissipation(beta, kappa, spec), A,
                      tuple(np.zeros((2, n)) for _ in rho), tuple(rho), (soe.mass,) * len(rho))
    u0 = rng.standard_normal((2, n))
    u0 /= np.linalg.norm(u0)
    return SystemConfig(ops, (soe,) * len(rho), u0, dt=dt, T=T, **kw), spec


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
