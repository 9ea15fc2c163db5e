"""Shared, session-scoped runs so the expensive simulations happen once."""
import numpy as np
import pytest

from zkls import bifurcation as bif
from zkls import diagnostics as dg
from zkls import simulator as sim

C = 1.0
L_CRIT = 2.0 / np.sqrt(5.0)

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def branch_interp():
    return bif.branch_interp(C)


@pytest.fixture(scope="session")
def stable_run():
    """L = 0.5, delta = 1e-3 random perturbation to t = 50 with fields kept."""
    return sim.orbital_stability_experiment(C, 0.5, 1e-3, seed=0, keep_fields=True,
                                            stop_on_exceed=False)


@pytest.fixture(scope="session")
def soliton_run():
    """Unperturbed soliton on the L = 0.5 torus to t = 50."""
    return sim.orbital_stability_experiment(C, 0.5, 0.0, keep_fields=True, stop_on_exceed=False)


@pytest.fixture(scope="session")
def unstable_run():
    """L = 2, unstable eigenmode with delta = 1e-3; stops once the distance exceeds 10 delta."""
    return sim.orbital_stability_experiment(C, 2.0, 1e-3, unstable_mode_k0=1)


@pytest.fixture(scope="session")
def growth_run():
    """L = 2, unstable eigenmode with delta = 1e-5 on 512 x 32 to t = 12."""
    grid = sim.default_grid(C, 2.0)
    cfg = sim.SimConfig(grid=grid, dt=0.005, t_end=12.0, c=C, record_every=20)
    st = sim.construct_unstable_data(C, 2.0, 1, 1e-5, grid, cfg)
    return sim.run(st, cfg)


@pytest.fixture(scope="session")
def stable_traj(stable_run):
    return dg.trajectory_from_state(stable_run.state, sim.default_grid(C, 0.5), C)


@pytest.fixture(scope="session")
def soliton_traj(soliton_run):
    return dg.trajectory_from_state(soliton_run.state, sim.default_grid(C, 0.5), C)


@pytest.fixture(scope="session")
def critical_run():
    """L = 2/sqrt(5), delta = 1e-3 random perturbation to t = 20."""
    return sim.orbital_stability_experiment(C, L_CRIT, 1e-3, seed=1, t_end=20.0, keep_fields=True,
                                            stop_on_exceed=False)


@pytest.fixture(scope="session")
def critical_traj(critical_run):
    return dg.trajectory_from_state(critical_run.state, sim.default_grid(C, L_CRIT), C)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
