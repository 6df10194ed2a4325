import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from thermophase.control import ControlPair
from thermophase.grid import build_grid
from thermophase.nonlinearity import make_coupling, make_potential
from thermophase.state import InitialData, PhysParams, Problem, TimeGrid


def small_problem(nx=16, nt=12, t_final=0.15, potential_kind="regular",
                  coupling_kind="affine", phi_amp=0.3):
    """Compact nonhomogeneous problem used across the sensitivity tests."""
    grid = build_grid(1.0, 1.0, nx, nx)
    tg = TimeGrid(t_final=t_final, nt=nt)
    params = PhysParams()
    potential = make_potential(potential_kind)
    coupling = (make_coupling("affine", a=-1.0, b=0.0) if coupling_kind == "affine"
                else make_coupling("bounded_smooth", c=1.0))
    x, y = grid.cell_centers()
    phi0 = phi_amp * np.cos(np.pi * x) * np.cos(np.pi * y)
    w0 = 0.1 * np.cos(np.pi * x)
    return Problem(grid, tg, params, potential, coupling, InitialData(phi0, w0))


def smooth_control(problem, u_amp=0.5, v0_amp=0.3):
    grid, tg = problem.grid, problem.time
    x, y = grid.cell_centers()
    t = np.arange(1, tg.nt + 1) * tg.tau
    u = u_amp * (np.cos(np.pi * x) * np.cos(np.pi * y))[None, :, :] * (1.0 + t)[:, None, None]
    v0 = v0_amp * np.cos(np.pi * y)
    return ControlPair(u, v0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
