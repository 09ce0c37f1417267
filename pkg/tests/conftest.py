import pytest

from stefan_spde.basis import BasisSpec
from stefan_spde.enthalpy import PhysicalParams
from stefan_spde.noise import NoiseSpec
from stefan_spde.simulation import SimConfig, prepare, simulate_ensemble


def small_noisy_config(**kw) -> SimConfig:
    """A cheap 2D run with every nonlinear term active (m = 8, K = 8)."""
    base = dict(basis=BasisSpec(2, 8), noise=NoiseSpec(K=8, alpha0=0.5, decay=2.0), T=0.02, save_every=5,
                paths=6, seed=11)
    base.update(kw)
    return SimConfig(**base)


def heat_config(dim=2, m=8, **kw) -> SimConfig:
    base = dict(basis=BasisSpec(dim, m), enthalpy=PhysicalParams.heat(), noise=NoiseSpec(alpha0=0.0),
                T=0.002, initial="mode(1)" if dim == 1 else "mode(1, 1)", save_every=5)
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture(scope="session")
def noisy_run():
    setup = prepare(small_noisy_config())
    return setup, simulate_ensemble(setup)


@pytest.fixture(scope="session")
def heat_run():
    setup = prepare(heat_config())
    return setup, simulate_ensemble(setup)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
