"""Semi-implicit time stepping for the coupled phase / thermal-displacement system.

One step from t_n to t_{n+1} performs, in order:

  1. phase step, implicit in the monotone nonlinearity (Newton + CG):
       (phi' - phi_n)/tau - lap(phi') + gamma(phi')
         + (2/theta_c) pi(phi_n) - (1/theta_c^2) v_n pi(phi_n) = 0
  2. thermal step, one SPD solve for v' (the time derivative of w):
       (v' - v_n)/tau - alpha lap(v') - beta lap(w_n + tau v')
         + (pi_hat(phi') - pi_hat(phi_n))/tau = u_{n+1}
     followed by the exact update w' = w_n + tau v'.

The Newton operator I/tau - lap + diag(gamma') and the thermal operator
I/tau + alpha (-lap) + tau beta (-lap) are both symmetric positive definite,
so every linear solve goes through conjugate gradients.

The coupling enters the thermal equation as the exact difference quotient of
pi_hat, which turns the lumped internal-energy balance

    sum(v' - v_n) + sum(pi_hat(phi') - pi_hat(phi_n)) = tau * sum(u_{n+1})

into a per-step identity up to the linear-solver tolerance: the zero-flux
Laplacians drop out of the cell sum exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import BadParameter, DomainViolation, NewtonDivergence, StepError, ThermophaseError
from .grid import Field, GridSpec, cg_solve, laplacian_neumann, norm
from .nonlinearity import Coupling, Potential

if TYPE_CHECKING:
    from .control import ControlPair


@dataclass(frozen=True)
class PhysParams:
    """Heat-flux coefficients and critical temperature; all must be positive."""

    alpha: float = 1.0
    beta: float = 1.0
    theta_c: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "theta_c"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise BadParameter(f"A1: {name} must be > 0, got {value}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, t_final] into nt steps."""

    t_final: float
    nt: int

    def __post_init__(self):
        if not self.t_final > 0.0:
            raise BadParameter(f"t_final must be > 0, got {self.t_final}")
        if self.nt < 1:
            raise BadParameter(f"nt must be >= 1, got {self.nt}")

    @property
    def tau(self) -> float:
        return self.t_final / self.nt

    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.tau


@dataclass
class InitialData:
    """Initial phase and thermal displacement; v0 is injected by the control."""

    phi0: Field
    w0: Field
    v0: Field | None = None


@dataclass(frozen=True)
class SolverOptions:
    cg_tol: float = 1e-12
    cg_maxit: int = 50000
    newton_tol: float = 1e-11
    newton_maxit: int = 30
    newton_max_damping: int = 40


@dataclass
class Problem:
    """Everything that defines one forward solve except the control."""

    grid: GridSpec
    time: TimeGrid
    params: PhysParams
    potential: Potential
    coupling: Coupling
    initial: InitialData


@dataclass
class PhiStepInfo:
    newton_iters: int = 0
    cg_iters: int = 0
    domain_guard_hits: int = 0


@dataclass
class ThermalStepInfo:
    cg_iters: int = 0
    balance_residual: float = 0.0
    balance_scale: float = 1.0


@dataclass
class StepRecord:
    """Per-step diagnostics; one record per node, node 0 has zero iteration counts."""

    step: int
    time: float
    min_phi: float
    max_phi: float
    l2_phi: float
    v_phi: float
    l2_v: float
    v_v: float
    linf_v: float
    newton_iters: int
    cg_iters: int
    energy_residual: float
    cumulative_balance_residual: float
    balance_scale: float = 1.0
    domain_guard_hits: int = 0


@dataclass
class StateTrajectory:
    """Snapshots of (phi, w, v) at every node plus per-step diagnostics.

    Arrays have shape (nt+1, ny, nx); v holds the time derivative of w, i.e.
    the temperature.  The update w[n+1] = w[n] + tau * v[n+1] is bit-exact.
    """

    phi: np.ndarray
    w: np.ndarray
    v: np.ndarray
    tau: float
    steps: list[StepRecord] = field(default_factory=list, repr=False)
    phi0_prime_l2: float = 0.0
    cell_volume: float = 1.0

    @property
    def nt(self) -> int:
        return self.phi.shape[0] - 1


@dataclass
class Diagnostics:
    """Run-level summary assembled from a complete trajectory.

    sup_v_phi, sup_l2_v and sup_gamma_hat_l1 monitor the quantities the
    a-priori energy estimate bounds (qualitatively: they must stay finite and
    data-controlled; no constant is checked).
    """

    steps: list[StepRecord]
    r_star_low: float
    r_star_high: float
    separation_margin: float
    separation_breach: bool
    domain_guard_fired: bool
    max_energy_residual: float
    max_scaled_energy_residual: float
    sup_v_phi: float
    sup_l2_v: float
    sup_gamma_hat_l1: float
    phi0_prime_l2: float


def phi_step(grid, potential, coupling, params, phi_n, v_n, tau, opts=SolverOptions()):
    """Implicit phase update; returns (phi_{n+1}, PhiStepInfo).

    Newton on  G(p) = p/tau - lap(p) + gamma(p) - b  with
    b = phi_n/tau - (2/theta_c) pi(phi_n) + (1/theta_c^2) v_n pi(phi_n).
    The Jacobian I/tau - lap + diag(gamma') is SPD; damping by step halving
    keeps iterates interior to the potential's domain.
    """
    phi_n = grid.check_field(phi_n, "phi_n")
    v_n = grid.check_field(v_n, "v_n")
    thc = params.theta_c
    pi_n = coupling.pi(phi_n)
    b = phi_n / tau - (2.0 / thc) * pi_n + (v_n * pi_n) / thc**2
    info = PhiStepInfo()

    if not potential.contains(phi_n):
        raise DomainViolation("phi_n is not interior to the potential domain")

    def residual(p):
        return p / tau - laplacian_neumann(grid, p) + potential.gamma(p) - b

    phi = phi_n.copy()
    r = residual(phi)
    rnorm = norm(grid, r)
    while rnorm > opts.newton_tol:
        if info.newton_iters >= opts.newton_maxit:
            raise NewtonDivergence(
                f"Newton stalled at residual {rnorm:.3e} after {info.newton_iters} iterations",
                residual=rnorm,
                iterations=info.newton_iters,
            )
        gp = potential.dgamma(phi)

        def apply(z, gp=gp):
            return z / tau - laplacian_neumann(grid, z) + gp * z

        res = cg_solve(grid, apply, -r, tol=opts.cg_tol, maxit=opts.cg_maxit)
        info.cg_iters += res.iterations
        delta = res.x

        # Damped update: the trial must stay interior and decrease the residual.
        s = 1.0
        accepted = False
        interior_failed = False
        for _ in range(opts.newton_max_damping + 1):
            trial = phi + s * delta
            if not potential.contains(trial):
                info.domain_guard_hits += 1
                interior_failed = True
                s *= 0.5
                continue
            r_trial = residual(trial)
            rnorm_trial = norm(grid, r_trial)
            if math.isfinite(rnorm_trial) and (rnorm_trial < rnorm or rnorm_trial <= opts.newton_tol):
                phi, r, rnorm = trial, r_trial, rnorm_trial
                accepted = True
                break
            interior_failed = False
            s *= 0.5
        if not accepted:
            if interior_failed:
                raise DomainViolation(
                    f"Newton iterate escaped the potential domain after "
                    f"{opts.newton_max_damping} dampings"
                )
            raise NewtonDivergence(
                f"no residual decrease after {opts.newton_max_damping} dampings "
                f"(residual {rnorm:.3e})",
                residual=rnorm,
                iterations=info.newton_iters,
            )
        info.newton_iters += 1
    return phi, info


def thermal_step(grid, coupling, params, w_n, v_n, phi_n, phi_np1, u_np1, tau, opts=SolverOptions()):
    """Thermal update; returns (w_{n+1}, v_{n+1}, ThermalStepInfo).

    Solves the SPD system
      (I/tau + alpha (-lap) + tau beta (-lap)) v' = v_n/tau + beta lap(w_n)
          - (pi_hat(phi_{n+1}) - pi_hat(phi_n))/tau + u_{n+1}
    and sets w_{n+1} = w_n + tau v' with that exact expression.
    """
    w_n = grid.check_field(w_n, "w_n")
    v_n = grid.check_field(v_n, "v_n")
    u_np1 = grid.check_field(u_np1, "u_np1")
    alpha, beta = params.alpha, params.beta
    pi_hat_diff = coupling.pi_hat(phi_np1) - coupling.pi_hat(phi_n)
    rhs = v_n / tau + beta * laplacian_neumann(grid, w_n) - pi_hat_diff / tau + u_np1

    def apply(z):
        return z / tau - (alpha + tau * beta) * laplacian_neumann(grid, z)

    res = cg_solve(grid, apply, rhs, tol=opts.cg_tol, maxit=opts.cg_maxit)
    v_np1 = res.x
    w_np1 = w_n + tau * v_np1

    vol = grid.cell_volume
    int_dv = vol * float(np.sum(v_np1 - v_n))
    int_dpi = vol * float(np.sum(pi_hat_diff))
    int_u = vol * float(np.sum(u_np1))
    residual = int_dv + int_dpi - tau * int_u
    scale = 1.0 + abs(int_dv) + abs(int_dpi) + tau * abs(int_u) + vol * float(np.sum(np.abs(v_np1)))
    info = ThermalStepInfo(cg_iters=res.iterations, balance_residual=residual, balance_scale=scale)
    return w_np1, v_np1, info


def _node_record(grid, step, time, phi, v, newton_iters, cg_iters, energy_residual,
                 cumulative, balance_scale, guard_hits):
    return StepRecord(
        step=step,
        time=time,
        min_phi=float(np.min(phi)),
        max_phi=float(np.max(phi)),
        l2_phi=norm(grid, phi),
        v_phi=norm(grid, phi, "v"),
        l2_v=norm(grid, v),
        v_v=norm(grid, v, "v"),
        linf_v=float(np.max(np.abs(v))),
        newton_iters=newton_iters,
        cg_iters=cg_iters,
        energy_residual=energy_residual,
        cumulative_balance_residual=cumulative,
        balance_scale=balance_scale,
        domain_guard_hits=guard_hits,
    )


def compat_phi0_prime(grid, potential, coupling, params, phi0, v0):
    """Initial time derivative of phi implied by the phase equation."""
    thc = params.theta_c
    pi0 = coupling.pi(phi0)
    return (laplacian_neumann(grid, phi0) - potential.gamma(phi0)
            - (2.0 / thc) * pi0 + (v0 * pi0) / thc**2)


def solve_state(problem: Problem, control: "ControlPair", opts=SolverOptions()) -> StateTrajectory:
    """March the full trajectory; fails fast with the step index on any error."""
    grid, tg = problem.grid, problem.time
    nt, tau = tg.nt, tg.tau
    phi0 = grid.check_field(problem.initial.phi0, "phi0")
    w0 = grid.check_field(problem.initial.w0, "w0")
    v0 = grid.check_field(control.v0, "v0")
    u = np.asarray(control.u, dtype=float)
    if u.shape != (nt, grid.ny, grid.nx):
        raise StepError(0, f"u has shape {u.shape}, expected {(nt, grid.ny, grid.nx)}")

    if problem.potential.bounded_domain and not problem.potential.contains(phi0):
        raise DomainViolation("phi0 must be strictly interior to the potential domain")

    phi = np.empty((nt + 1, grid.ny, grid.nx))
    w = np.empty_like(phi)
    v = np.empty_like(phi)
    phi[0], w[0], v[0] = phi0, w0, v0

    phi0p = compat_phi0_prime(grid, problem.potential, problem.coupling, problem.params, phi0, v0)
    steps = [_node_record(grid, 0, 0.0, phi0, v0, 0, 0, 0.0, 0.0, 1.0, 0)]
    cumulative = 0.0
    for n in range(nt):
        try:
            phi_next, pinfo = phi_step(
                grid, problem.potential, problem.coupling, problem.params,
                phi[n], v[n], tau, opts,
            )
            w_next, v_next, tinfo = thermal_step(
                grid, problem.coupling, problem.params,
                w[n], v[n], phi[n], phi_next, u[n], tau, opts,
            )
        except ThermophaseError as exc:
            raise StepError(n + 1, exc) from exc
        phi[n + 1], w[n + 1], v[n + 1] = phi_next, w_next, v_next
        cumulative += tinfo.balance_residual
        steps.append(_node_record(
            grid, n + 1, (n + 1) * tau, phi_next, v_next,
            pinfo.newton_iters, pinfo.cg_iters + tinfo.cg_iters,
            tinfo.balance_residual, cumulative, tinfo.balance_scale,
            pinfo.domain_guard_hits,
        ))
    return StateTrajectory(phi=phi, w=w, v=v, tau=tau, steps=steps,
                           phi0_prime_l2=norm(grid, phi0p), cell_volume=grid.cell_volume)


def trajectory_difference_norm(grid: GridSpec, trajA: StateTrajectory,
                               trajB: StateTrajectory) -> float:
    """Strong-norm monitor of the difference of two trajectories.

    Sums the discrete analogues of the solution-difference norms that the
    continuous-dependence estimate controls: sup-in-time of the V norm and of
    the Laplacian L2 norm of delta-phi, sup of the difference quotient of
    delta-phi, sup of the V norm and difference quotient of delta-v, and the
    time-L2 of the Laplacian of delta-w.  Linear in the difference, so a
    data perturbation of size delta must move it proportionally.
    """
    tau = trajA.tau
    dphi = trajA.phi - trajB.phi
    dw = trajA.w - trajB.w
    dv = trajA.v - trajB.v
    nt = dphi.shape[0] - 1
    sup_v_phi = max(norm(grid, dphi[n], "v") for n in range(nt + 1))
    sup_lap_phi = max(norm(grid, laplacian_neumann(grid, dphi[n])) for n in range(nt + 1))
    sup_dt_phi = max(norm(grid, (dphi[n + 1] - dphi[n]) / tau) for n in range(nt))
    sup_v_v = max(norm(grid, dv[n], "v") for n in range(nt + 1))
    sup_dt_v = max(norm(grid, (dv[n + 1] - dv[n]) / tau) for n in range(nt))
    l2t_lap_w = math.sqrt(sum(tau * norm(grid, laplacian_neumann(grid, dw[n])) ** 2
                              for n in range(nt + 1)))
    return sup_v_phi + sup_lap_phi + sup_dt_phi + sup_v_v + sup_dt_v + l2t_lap_w


def run_diagnostics(traj: StateTrajectory, potential: Potential,
                    margin: float | None = None) -> Diagnostics:
    """Run-level summary: separation bounds, balance residuals, norm monitors."""
    r_low = float(np.min(traj.phi))
    r_high = float(np.max(traj.phi))
    if potential.bounded_domain:
        sep_margin = min(r_low - potential.r_minus, potential.r_plus - r_high)
        guard = potential.interior_margin if margin is None else margin
        breach = sep_margin <= guard
    else:
        sep_margin = math.inf
        breach = False
    recs = traj.steps
    gamma_hat_l1 = traj.cell_volume * max(
        float(np.sum(np.abs(potential.gamma_hat(traj.phi[n]))))
        for n in range(traj.nt + 1))
    return Diagnostics(
        steps=recs,
        r_star_low=r_low,
        r_star_high=r_high,
        separation_margin=sep_margin,
        separation_breach=breach,
        domain_guard_fired=any(r.domain_guard_hits > 0 for r in recs),
        max_energy_residual=max(abs(r.energy_residual) for r in recs),
        max_scaled_energy_residual=max(abs(r.energy_residual) / r.balance_scale for r in recs),
        sup_v_phi=max(r.v_phi for r in recs),
        sup_l2_v=max(r.l2_v for r in recs),
        sup_gamma_hat_l1=gamma_hat_l1,
        phi0_prime_l2=traj.phi0_prime_l2,
    )
