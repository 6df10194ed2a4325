"""Phase-field solver with thermal memory and adjoint-based optimal control.

Subpackage map:

- ``grid``: cell-centered grid, zero-flux Laplacian, inner products, CG.
- ``nonlinearity``: convex potentials and Lipschitz couplings.
- ``state``: semi-implicit forward solver and runtime diagnostics.
- ``sensitivity``: tangent map, exact transpose, continuous adjoint.
- ``control``: cost, reduced gradient, projection, projected-gradient descent.
- ``snapshots``: field snapshot format and trajectory persistence.
- ``config`` / ``cli``: configuration ingestion and experiment drivers.
"""

from . import errors
from .grid import GridSpec, build_grid, cg_solve, inner, laplacian_neumann, norm, riesz_v
from .nonlinearity import Coupling, Potential, eval_gamma, eval_pi, make_coupling, make_potential
from .state import (InitialData, PhysParams, Problem, SolverOptions, StateTrajectory,
                    TimeGrid, phi_step, run_diagnostics, solve_state, thermal_step)
from .sensitivity import (AdjointPair, GradientSeeds, LinearizedPair, Perturbation,
                          adjoint_solve_continuous, adjoint_solve_discrete,
                          circledast_accumulate, tangent_solve, tangent_transpose)
from .control import (AdmissibleSet, ControlPair, CostSpec, GradientPair, OptimizeOptions,
                      OptimizeReport, ReducedProblem, check_vi, clamp_formula_residual,
                      cost_eval, optimize, project_admissible, reduced_cost,
                      reduced_gradient, stationarity_residual, u_inner, u_norm,
                      v0_inner, v0_norm)

__all__ = [name for name in dir() if not name.startswith("_")]
