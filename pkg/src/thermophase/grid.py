"""Cell-centered rectangular grid, zero-flux Laplacian, inner products, CG solver.

Fields live at the cell centers of a uniform nx-by-ny grid over
[0, lx] x [0, ly] and are stored as numpy arrays of shape (ny, nx), row-major
over cell centers: entry [j, i] belongs to the center ((i+0.5) hx, (j+0.5) hy).

The Laplacian is the finite-volume five-point stencil with zero-flux closure
at boundary faces.  By construction it is exactly symmetric with respect to
the lumped L2 inner product, negative semi-definite, and annihilates constant
fields, so its cell sum telescopes to zero up to rounding.  The V inner
product is the L2 part plus the face-difference stiffness form; with square
cells in 2-D the h factors cancel, so each interior face contributes
(difference of a) * (difference of b).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AnisotropicCells, DegenerateGrid, NoConvergence, ShapeMismatch

Field = np.ndarray

_SPACING_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid over the rectangle [0, lx] x [0, ly].

    Requires nx, ny >= 3 and square cells (hx == hy up to 1e-12 relative).
    """

    lx: float
    ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DegenerateGrid(f"need nx, ny >= 3, got {self.nx} x {self.ny}")
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise DegenerateGrid(f"need positive edge lengths, got {self.lx} x {self.ly}")
        hx, hy = self.lx / self.nx, self.ly / self.ny
        if abs(hx - hy) > _SPACING_RTOL * max(hx, hy):
            raise AnisotropicCells(f"cells must be square: hx={hx!r}, hy={hy!r}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.ny, self.nx)

    @property
    def cell_count(self) -> int:
        return self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    def zeros(self) -> Field:
        return np.zeros(self.shape)

    def full(self, value: float) -> Field:
        return np.full(self.shape, float(value))

    def check_field(self, f: Field, name: str = "field") -> Field:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ShapeMismatch(f"{name} has shape {f.shape}, grid needs {self.shape}")
        return f

    def cell_centers(self) -> tuple[Field, Field]:
        """Coordinate arrays X, Y of shape (ny, nx)."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)


def build_grid(lx: float, ly: float, nx: int, ny: int) -> GridSpec:
    """Validated GridSpec with derived spacings."""
    return GridSpec(float(lx), float(ly), int(nx), int(ny))


def laplacian_neumann(grid: GridSpec, f: Field) -> Field:
    """Five-point cell-centered Laplacian with zero flux through boundary faces."""
    f = grid.check_field(f)
    out = np.zeros_like(f)
    dx = f[:, 1:] - f[:, :-1]
    out[:, :-1] += dx
    out[:, 1:] -= dx
    dy = f[1:, :] - f[:-1, :]
    out[:-1, :] += dy
    out[1:, :] -= dy
    out /= grid.hx * grid.hy
    return out


def _stiffness(a: Field, b: Field) -> float:
    sx = float(np.sum((a[:, 1:] - a[:, :-1]) * (b[:, 1:] - b[:, :-1])))
    sy = float(np.sum((a[1:, :] - a[:-1, :]) * (b[1:, :] - b[:-1, :])))
    return sx + sy


def inner(grid: GridSpec, a: Field, b: Field, metric: str = "l2") -> float:
    """Lumped L2 inner product, or the V inner product (L2 plus stiffness)."""
    a = grid.check_field(a, "a")
    b = grid.check_field(b, "b")
    l2 = grid.cell_volume * float(np.dot(a.ravel(), b.ravel()))
    if metric == "l2":
        return l2
    if metric == "v":
        return l2 + _stiffness(a, b)
    raise ValueError(f"unknown metric {metric!r}")


def norm(grid: GridSpec, a: Field, metric: str = "l2") -> float:
    return float(np.sqrt(max(inner(grid, a, a, metric), 0.0)))


@dataclass
class CGResult:
    """Solution plus convergence report of one conjugate-gradient solve."""

    x: Field
    iterations: int
    residuals: list[float] = field(repr=False, default_factory=list)

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def cg_solve(grid, apply, rhs, tol=1e-12, maxit=50000, x0=None, precond=None) -> CGResult:
    """Matrix-free conjugate gradients for an SPD operator.

    `apply` must be symmetric positive definite with respect to the L2 inner
    product on the grid.  Stops once ||apply(x) - rhs||_L2 <= tol * ||rhs||_L2
    and raises NoConvergence (carrying the residual) at the iteration cap.
    `precond`, if given, applies an SPD approximation of the inverse.
    """
    rhs = grid.check_field(rhs, "rhs")
    x = grid.zeros() if x0 is None else grid.check_field(x0, "x0").copy()
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    bnorm = float(np.sqrt(np.dot(rhs.ravel(), rhs.ravel())))
    residuals = [float(np.sqrt(np.dot(r.ravel(), r.ravel())))]
    if bnorm == 0.0:
        return CGResult(x=np.zeros_like(rhs), iterations=0, residuals=[0.0])
    target = tol * bnorm
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(np.dot(r.ravel(), z.ravel()))
    for k in range(int(maxit)):
        if residuals[-1] <= target:
            return CGResult(x=x, iterations=k, residuals=residuals)
        ap = apply(p)
        pap = float(np.dot(p.ravel(), ap.ravel()))
        if not np.isfinite(pap) or pap <= 0.0:
            raise NoConvergence(
                f"operator not positive definite along search direction (p.Ap={pap})",
                residual=residuals[-1],
                iterations=k,
            )
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        residuals.append(float(np.sqrt(np.dot(r.ravel(), r.ravel()))))
        z = precond(r) if precond is not None else r
        rz_new = float(np.dot(r.ravel(), z.ravel()))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(
        f"CG did not reach tol {tol:g} in {maxit} iterations "
        f"(residual {residuals[-1]:.3e}, target {target:.3e})",
        residual=residuals[-1],
        iterations=int(maxit),
    )


def riesz_v(grid: GridSpec, f: Field, tol: float = 1e-12, maxit: int = 50000) -> Field:
    """V-Riesz representative: solve z - lap(z) = f with the zero-flux stencil.

    The solution satisfies <z, h>_V = <f, h>_L2 for every discrete field h,
    up to the solver tolerance.
    """
    f = grid.check_field(f)

    def apply(z):
        return z - laplacian_neumann(grid, z)

    return cg_solve(grid, apply, f, tol=tol, maxit=maxit).x
