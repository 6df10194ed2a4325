"""Configuration ingestion: JSON schema, defaults, validation, field presets.

A config file is a JSON object with the blocks below; only ``grid`` and
``time`` are required.  Unknown keys are rejected at every level, and value
errors name the violated assumption (e.g. "A1: alpha must be > 0").

Field specs (initial data, controls, targets, bounds) are either a number
(constant field), a preset object, or a snapshot reference:

  {"const": c}
  {"cosine": {"amplitude": a, "kx": 1, "ky": 1, "offset": 0, "ramp": 0}}
      -> offset + a (1 + ramp t) cos(kx pi x / lx) cos(ky pi y / ly)
        (ramp only makes sense for space-time fields; t = 0 for spatial ones)
  {"snapshot": "field.cgw"}              (broadcast in time when space-time)
  {"snapshot_dir": {"path": dir, "prefix": "u"}}   (space-time only; reads
      prefix_%06d.cgw per node)

Cost targets may instead be generated from a known control run:

  "targets": {"from_run": {"u": <spec>, "v0": <spec>}}

which solves the state system for that control and uses its trajectory (and
terminal values) as the six tracking targets, so recovery experiments are
self-contained.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .control import AdmissibleSet, ControlPair, CostSpec, OptimizeOptions
from .errors import ParseError, ThermophaseError, ValidationError
from .grid import GridSpec, build_grid
from .nonlinearity import COUPLING_KINDS, POTENTIAL_KINDS, Coupling, Potential
from .snapshots import read_field
from .state import (InitialData, PhysParams, Problem, SolverOptions, TimeGrid,
                    solve_state)

_DEFAULTS: dict[str, Any] = {
    "grid": {"lx": 1.0, "ly": 1.0, "nx": 32, "ny": 32},
    "time": {"t_final": 0.25, "nt": 50},
    "params": {"alpha": 1.0, "beta": 1.0, "theta_c": 1.0},
    "potential": {"kind": "regular", "kappa": 1.0, "eps_pen": 0.1, "interior_margin": 1e-9},
    "coupling": {"kind": "affine", "a": -1.0, "b": 0.0, "c": 1.0},
    "initial": {"phi0": 0.0, "w0": 0.0},
    "control": {"u": 0.0, "v0": 0.0},
    "admissible": {"u_lo": -1e6, "u_hi": 1e6, "v_lo": -1e6, "v_hi": 1e6, "ball_radius": 1e6},
    "solver": {
        "cg_tol": 1e-12, "cg_maxit": 50000,
        "newton_tol": 1e-11, "newton_maxit": 30, "newton_max_damping": 40,
        "armijo_c": 1e-4, "armijo_shrink": 0.5, "armijo_max_backtracks": 60,
        "stationarity_tol": 1e-6, "stationarity_step": 1.0,
        "max_iters": 200, "vi_samples": 16, "seed": 0,
    },
    "output": {"directory": "out", "snapshot_stride": 0},
    "grad_check": {
        "epsilons": [1e-1, 1e-2, 1e-3], "n_directions": 5,
        "fd_steps": [1e-2, 1e-3, 1e-4],
        "taylor_slope_min": 1.8, "fd_rel_tol": 1e-6,
    },
    "adjoint_test": {
        "n_trials": 10, "dot_tol": 1e-10,
        "levels": [], "gap_tol": 5e-2, "order_min": 0.8,
    },
    "optimize": {"recovery_factor": 0.0, "clamp_formula_tol": 0.0, "vi_tol": 0.0},
    "convergence": {
        "lap_levels": [32, 64, 128], "lap_order_min": 1.9, "mean_zero_nx": 16,
        "spatial_levels": [], "spatial_ref_nx": 0, "spatial_nt": 8,
        "spatial_order_min": 1.9,
        "temporal_nts": [], "temporal_ref_nt": 0, "temporal_nx": 32,
        "temporal_order_min": 0.9,
    },
    "cont_dependence": {
        "deltas": [1e-1, 1e-2, 1e-3, 1e-4], "slope_min": 0.9, "slope_max": 1.1,
    },
}

_COST_KEYS = ("k1", "k2", "k3", "k4", "k5", "k6", "nu1", "nu2")
_TARGET_KEYS = ("phi_q", "w_q", "wprime_q", "phi_omega", "w_omega", "wprime_omega")
_COSINE_KEYS = ("amplitude", "kx", "ky", "offset", "ramp")


def _reject_unknown(block: dict, allowed, where: str) -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")


def _is_field_spec(value) -> bool:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return True
    if isinstance(value, dict) and len(value) == 1:
        return next(iter(value)) in ("const", "cosine", "snapshot", "snapshot_dir")
    return False


def _check_field_spec(value, where: str, space_time: bool) -> None:
    if not _is_field_spec(value):
        raise ValidationError(f"{where}: not a field spec: {value!r}")
    if isinstance(value, dict):
        key = next(iter(value))
        body = value[key]
        if key == "const" and not isinstance(body, (int, float)):
            raise ValidationError(f"{where}: const must be a number")
        if key == "cosine":
            if not isinstance(body, dict):
                raise ValidationError(f"{where}: cosine takes an object")
            _reject_unknown(body, _COSINE_KEYS, where)
        if key == "snapshot" and not isinstance(body, str):
            raise ValidationError(f"{where}: snapshot takes a path string")
        if key == "snapshot_dir":
            if not space_time:
                raise ValidationError(f"{where}: snapshot_dir only applies to space-time fields")
            if not isinstance(body, dict):
                raise ValidationError(f"{where}: snapshot_dir takes an object")
            _reject_unknown(body, ("path", "prefix"), where)


def _finite(value: np.ndarray, what) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise ValidationError(f"field spec {what!r} produced non-finite entries")
    return value


def build_field(spec, grid: GridSpec, t: float = 0.0) -> np.ndarray:
    """Materialize one spatial field from its spec."""
    if isinstance(spec, (int, float)):
        return _finite(grid.full(float(spec)), spec)
    key = next(iter(spec))
    body = spec[key]
    if key == "const":
        return _finite(grid.full(float(body)), spec)
    if key == "cosine":
        amp = float(body.get("amplitude", 1.0))
        kx = float(body.get("kx", 1))
        ky = float(body.get("ky", 1))
        offset = float(body.get("offset", 0.0))
        ramp = float(body.get("ramp", 0.0))
        x, y = grid.cell_centers()
        shape = np.cos(kx * np.pi * x / grid.lx) * np.cos(ky * np.pi * y / grid.ly)
        return _finite(offset + amp * (1.0 + ramp * t) * shape, spec)
    if key == "snapshot":
        f = read_field(body)
        return grid.check_field(f, body)
    raise ValidationError(f"cannot build spatial field from {spec!r}")


def build_space_time(spec, grid: GridSpec, nodes, tau: float) -> np.ndarray:
    """Materialize a space-time field at the given node indices."""
    if isinstance(spec, dict) and next(iter(spec)) == "snapshot_dir":
        body = spec["snapshot_dir"]
        prefix = body.get("prefix", "u")
        out = [grid.check_field(read_field(os.path.join(body["path"], f"{prefix}_{n:06d}.cgw")))
               for n in nodes]
        return np.stack(out)
    return np.stack([build_field(spec, grid, t=n * tau) for n in nodes])


def _validated(raw: dict) -> dict:
    """Defaults applied, every key checked; returns the normalized dict."""
    if not isinstance(raw, dict):
        raise ValidationError("top-level config must be an object")
    _reject_unknown(raw, list(_DEFAULTS) + ["cost"], "config")
    for required in ("grid", "time"):
        if required not in raw:
            raise ValidationError(f"config: missing required block {required!r}")
    cfg = copy.deepcopy(_DEFAULTS)
    for name, block in raw.items():
        if name == "cost":
            continue
        if not isinstance(block, dict):
            raise ValidationError(f"{name}: must be an object")
        _reject_unknown(block, cfg[name], name)
        cfg[name].update(copy.deepcopy(block))

    g = cfg["grid"]
    for k in ("lx", "ly"):
        if not (isinstance(g[k], (int, float)) and g[k] > 0):
            raise ValidationError(f"grid.{k} must be > 0")
    for k in ("nx", "ny"):
        if not (isinstance(g[k], int) and g[k] >= 3):
            raise ValidationError(f"grid.{k} must be an integer >= 3")
    t = cfg["time"]
    if not (isinstance(t["t_final"], (int, float)) and t["t_final"] > 0):
        raise ValidationError("time.t_final must be > 0")
    if not (isinstance(t["nt"], int) and t["nt"] >= 1):
        raise ValidationError("time.nt must be an integer >= 1")
    for k in ("alpha", "beta", "theta_c"):
        v = cfg["params"][k]
        if not (isinstance(v, (int, float)) and v > 0):
            raise ValidationError(f"A1: {k} must be > 0, got {v}")
    pot = cfg["potential"]
    if pot["kind"] not in POTENTIAL_KINDS:
        raise ValidationError(f"A2: unknown potential kind {pot['kind']!r}")
    if pot["kind"] == "logarithmic" and not pot["kappa"] > 0:
        raise ValidationError("A2: kappa must be > 0 for the logarithmic potential")
    if pot["kind"] == "obstacle_penalized" and not pot["eps_pen"] > 0:
        raise ValidationError("A2: eps_pen must be > 0 for the penalized obstacle")
    cpl = cfg["coupling"]
    if cpl["kind"] not in COUPLING_KINDS:
        raise ValidationError(f"A3: unknown coupling kind {cpl['kind']!r}")
    for k in ("a", "b", "c"):
        if not (isinstance(cpl[k], (int, float)) and math.isfinite(cpl[k])):
            raise ValidationError(f"A3: coupling.{k} must be finite")
    for k in ("phi0", "w0"):
        _check_field_spec(cfg["initial"][k], f"initial.{k}", space_time=False)
    _check_field_spec(cfg["control"]["u"], "control.u", space_time=True)
    _check_field_spec(cfg["control"]["v0"], "control.v0", space_time=False)
    adm = cfg["admissible"]
    for k in ("u_lo", "u_hi", "v_lo", "v_hi"):
        _check_field_spec(adm[k], f"admissible.{k}", space_time=False)
    if not (isinstance(adm["ball_radius"], (int, float)) and adm["ball_radius"] > 0):
        raise ValidationError("C4: admissible.ball_radius must be > 0")

    if "cost" in raw:
        cost_raw = raw["cost"]
        if not isinstance(cost_raw, dict):
            raise ValidationError("cost: must be an object")
        _reject_unknown(cost_raw, list(_COST_KEYS) + ["targets"], "cost")
        cost = {k: 0.0 for k in _COST_KEYS}
        cost["targets"] = {}
        for k in _COST_KEYS:
            v = cost_raw.get(k, 0.0)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValidationError(f"C2: cost.{k} must be a nonnegative number")
            cost[k] = float(v)
        if not any(cost[k] > 0 for k in _COST_KEYS):
            raise ValidationError("C2: cost weights must not all be zero")
        targets = cost_raw.get("targets", {})
        if not isinstance(targets, dict):
            raise ValidationError("cost.targets: must be an object")
        if "from_run" in targets:
            _reject_unknown(targets, ("from_run",), "cost.targets")
            _reject_unknown(targets["from_run"], ("u", "v0"), "cost.targets.from_run")
            _check_field_spec(targets["from_run"].get("u", 0.0), "cost.targets.from_run.u",
                              space_time=True)
            _check_field_spec(targets["from_run"].get("v0", 0.0), "cost.targets.from_run.v0",
                              space_time=False)
        else:
            _reject_unknown(targets, _TARGET_KEYS, "cost.targets")
            for k, v in targets.items():
                _check_field_spec(v, f"cost.targets.{k}", space_time=k.endswith("_q"))
        cost["targets"] = copy.deepcopy(targets)
        cfg["cost"] = cost

    s = cfg["solver"]
    for k in ("cg_tol", "newton_tol", "armijo_c", "armijo_shrink", "stationarity_tol",
              "stationarity_step"):
        if not (isinstance(s[k], (int, float)) and s[k] > 0):
            raise ValidationError(f"solver.{k} must be > 0")
    for k in ("cg_maxit", "newton_maxit", "newton_max_damping", "armijo_max_backtracks",
              "max_iters", "vi_samples", "seed"):
        if not (isinstance(s[k], int) and s[k] >= 0):
            raise ValidationError(f"solver.{k} must be a nonnegative integer")
    out = cfg["output"]
    if not isinstance(out["directory"], str):
        raise ValidationError("output.directory must be a string")
    if not (isinstance(out["snapshot_stride"], int) and out["snapshot_stride"] >= 0):
        raise ValidationError("output.snapshot_stride must be a nonnegative integer")
    return cfg


@dataclass
class ProblemConfig:
    """Validated configuration plus lazily built solver objects."""

    raw: dict
    grid: GridSpec = field(init=False, repr=False)
    timegrid: TimeGrid = field(init=False, repr=False)

    def __post_init__(self):
        self.grid = build_grid(**self.raw["grid"])
        self.timegrid = TimeGrid(t_final=float(self.raw["time"]["t_final"]),
                                 nt=int(self.raw["time"]["nt"]))

    # -- constructed pieces -------------------------------------------------
    def params(self) -> PhysParams:
        p = self.raw["params"]
        return PhysParams(alpha=float(p["alpha"]), beta=float(p["beta"]),
                          theta_c=float(p["theta_c"]))

    def potential(self) -> Potential:
        p = self.raw["potential"]
        return Potential(kind=p["kind"], kappa=float(p["kappa"]),
                         eps_pen=float(p["eps_pen"]),
                         interior_margin=float(p["interior_margin"]))

    def coupling(self) -> Coupling:
        c = self.raw["coupling"]
        return Coupling(kind=c["kind"], a=float(c["a"]), b=float(c["b"]), c=float(c["c"]))

    def initial_data(self) -> InitialData:
        blk = self.raw["initial"]
        phi0 = build_field(blk["phi0"], self.grid)
        w0 = build_field(blk["w0"], self.grid)
        pot = self.potential()
        if pot.bounded_domain and not pot.contains(phi0):
            raise ValidationError("initial.phi0 must be strictly interior to the "
                                  "potential domain (strong-solution initial condition)")
        return InitialData(phi0=phi0, w0=w0)

    def problem(self) -> Problem:
        return Problem(grid=self.grid, time=self.timegrid, params=self.params(),
                       potential=self.potential(), coupling=self.coupling(),
                       initial=self.initial_data())

    def _space_time(self, spec) -> np.ndarray:
        nodes = range(1, self.timegrid.nt + 1)
        return build_space_time(spec, self.grid, nodes, self.timegrid.tau)

    def control(self) -> ControlPair:
        blk = self.raw["control"]
        return ControlPair(u=self._space_time(blk["u"]),
                           v0=build_field(blk["v0"], self.grid))

    def admissible_set(self) -> AdmissibleSet:
        blk = self.raw["admissible"]

        def bound(spec):
            if isinstance(spec, (int, float)):
                return float(spec)
            return build_field(spec, self.grid)

        return AdmissibleSet(u_lo=bound(blk["u_lo"]), u_hi=bound(blk["u_hi"]),
                             v_lo=bound(blk["v_lo"]), v_hi=bound(blk["v_hi"]),
                             ball_radius=float(blk["ball_radius"]))

    def solver_options(self) -> SolverOptions:
        s = self.raw["solver"]
        return SolverOptions(cg_tol=float(s["cg_tol"]), cg_maxit=int(s["cg_maxit"]),
                             newton_tol=float(s["newton_tol"]),
                             newton_maxit=int(s["newton_maxit"]),
                             newton_max_damping=int(s["newton_max_damping"]))

    def optimize_options(self, seed: int | None = None) -> OptimizeOptions:
        s = self.raw["solver"]
        return OptimizeOptions(
            armijo_c=float(s["armijo_c"]), armijo_shrink=float(s["armijo_shrink"]),
            armijo_max_backtracks=int(s["armijo_max_backtracks"]),
            stationarity_tol=float(s["stationarity_tol"]),
            stationarity_step=float(s["stationarity_step"]),
            max_iters=int(s["max_iters"]), vi_samples=int(s["vi_samples"]),
            seed=int(s["seed"] if seed is None else seed),
            solver=self.solver_options(),
        )

    def has_cost(self) -> bool:
        return "cost" in self.raw

    def cost_spec(self, problem: Problem | None = None) -> CostSpec:
        """Materialize the cost; runs the generating solve for from_run targets."""
        if "cost" not in self.raw:
            raise ValidationError("C2: this command needs a cost block")
        blk = self.raw["cost"]
        weights = {k: blk[k] for k in _COST_KEYS}
        nt = self.timegrid.nt
        spec = CostSpec.with_zero_targets(self.grid, nt, **weights)
        targets = blk["targets"]
        if "from_run" in targets:
            problem = problem if problem is not None else self.problem()
            gen = targets["from_run"]
            gen_ctrl = ControlPair(u=self._space_time(gen.get("u", 0.0)),
                                   v0=build_field(gen.get("v0", 0.0), self.grid))
            traj = solve_state(problem, gen_ctrl, self.solver_options())
            spec.phi_q = traj.phi.copy()
            spec.w_q = traj.w.copy()
            spec.wprime_q = traj.v.copy()
            spec.phi_omega = traj.phi[nt].copy()
            spec.w_omega = traj.w[nt].copy()
            spec.wprime_omega = traj.v[nt].copy()
            return spec
        all_nodes = range(0, nt + 1)
        for key, value in targets.items():
            if key.endswith("_q"):
                setattr(spec, key, build_space_time(value, self.grid, all_nodes,
                                                    self.timegrid.tau))
            else:
                setattr(spec, key, build_field(value, self.grid))
        return spec


def parse_config(path: str) -> ProblemConfig:
    """Load, validate, and normalize a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        cfg = ProblemConfig(raw=_validated(raw))
        cfg.initial_data()  # validates interiority and snapshot shapes eagerly
        cfg.control()
        cfg.admissible_set()
    except ThermophaseError:
        raise
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed config ({exc})") from exc
    return cfg


def parse_config_dict(raw: dict) -> ProblemConfig:
    """Validate an in-memory config object (same contract as parse_config)."""
    cfg = ProblemConfig(raw=_validated(raw))
    cfg.initial_data()
    cfg.control()
    cfg.admissible_set()
    return cfg


def echo_effective_config(cfg: ProblemConfig, path: str) -> None:
    """Write the normalized config (defaults materialized) as valid config JSON."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(cfg.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
