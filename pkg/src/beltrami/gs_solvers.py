"""Semilinear elliptic solvers for the two symmetric reductions.

    laplacian-xy:       -Lap Psi = g(Psi) + S
    grad-shafranov-rz:  -(Lap_{z,r} - r^-1 d_r) Psi = g(Psi) + S

with g = u3' u3 (resp. Gamma' Gamma) taken from a profile and Dirichlet data
on a rectangle.  S is an optional fixed source used for manufactured
solutions; physical problems leave it empty.

The Grad-Shafranov operator uses the conservative 5-point form

    r_i [ (Psi_{i+1} - Psi_i) / r_{i+1/2} - (Psi_i - Psi_{i-1}) / r_{i-1/2} ] / h^2 + Psi_zz,

which is second order, annihilates r^2 and z exactly, and becomes a
symmetric positive-definite matrix after division by r_i, so conjugate
gradients apply to both operators.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, StagnationError
from .fields import ChartTag, Grid, ScalarChartField
from .profiles import Profile

log = logging.getLogger(__name__)

OPERATORS = {"laplacian-xy": ChartTag.CARTESIAN_XY, "grad-shafranov-rz": ChartTag.MERIDIONAL_RZ}


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    tol: float = 1e-9
    omega: float = 0.8
    method: str = "picard"
    cg_tol: float = 1e-12
    cg_max_iter: int = 2000
    preconditioner: str = "amg"
    stagnation_window: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.omega <= 1:
            raise ValueError("relaxation omega must lie in (0, 1]")
        if self.method not in ("picard", "newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.preconditioner not in ("amg", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.max_iter < 0 or self.cg_max_iter < 1 or self.stagnation_window < 1:
            raise ValueError("iteration limits must be positive")

    @classmethod
    def from_spec(cls, spec: dict | None) -> "SolverOptions":
        spec = dict(spec or {})
        known = set(cls.__dataclass_fields__)
        extra = set(spec) - known
        if extra:
            raise ValueError(f"unknown solver keys: {sorted(extra)}")
        return cls(**spec)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class SemilinearProblem:
    operator: str
    profile: Profile
    dirichlet: ScalarChartField
    options: SolverOptions = field(default_factory=SolverOptions)
    source: ScalarChartField | None = None

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}")
        if self.dirichlet.chart is not OPERATORS[self.operator]:
            raise ValueError(f"{self.operator} needs a {OPERATORS[self.operator].value} grid")
        if min(self.grid.shape) < 3:
            raise ValueError("grid too small: need at least 3 nodes per axis")
        if self.source is not None and not self.source.grid.matches(self.grid):
            raise ValueError("source grid differs from the problem grid")

    @property
    def grid(self) -> Grid:
        return self.dirichlet.grid

    def g(self, psi):
        return self.profile.g(psi)

    def g_prime(self, psi):
        return self.profile.g_prime(psi)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list
    cg_iterations: list
    method: str
    message: str = ""

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_history": [float(x) for x in self.residual_history],
            "cg_iterations": list(self.cg_iterations),
            "method": self.method,
            "message": self.message,
        }


# -- discrete operator -----------------------------------------------------


def _check(kind, grid):
    if kind not in OPERATORS:
        raise ValueError(f"unknown operator {kind!r}")
    if grid.chart is not OPERATORS[kind]:
        raise ValueError(f"{kind} needs a {OPERATORS[kind].value} grid")
    if min(grid.shape) < 3:
        raise ValueError("grid too small: need at least 3 nodes per axis")


def _apply(kind, values, grid):
    """-L Psi at interior nodes (array of shape (n1-2, n2-2))."""
    h1, h2 = grid.spacing
    v = values
    c = v[1:-1, 1:-1]
    d22 = (v[1:-1, 2:] - 2 * c + v[1:-1, :-2]) / (h2 * h2)
    if kind == "laplacian-xy":
        d11 = (v[2:, 1:-1] - 2 * c + v[:-2, 1:-1]) / (h1 * h1)
    else:
        r = grid.axes()[0][1:-1, None]
        rp, rm = r + 0.5 * h1, r - 0.5 * h1
        d11 = r * ((v[2:, 1:-1] - c) / rp - (c - v[:-2, 1:-1]) / rm) / (h1 * h1)
    return -(d11 + d22)


def operator_apply(kind: str, psi: ScalarChartField) -> ScalarChartField:
    """Apply -Lap or -(Lap_{z,r} - r^-1 d_r); the result lives on the interior nodes."""
    grid = psi.grid
    _check(kind, grid)
    out = _apply(kind, psi.values, grid)
    origin = tuple(o + h for o, h in zip(grid.origin, grid.spacing))
    return ScalarChartField(grid.chart, origin, grid.spacing, out, f"L_{psi.name}")


def _weights(kind, grid):
    """Row scaling that symmetrizes the interior matrix (1/r for Grad-Shafranov)."""
    n1, n2 = grid.shape
    if kind == "laplacian-xy":
        return np.ones((n1 - 2, n2 - 2))
    r = grid.axes()[0][1:-1]
    return np.repeat((1.0 / r)[:, None], n2 - 2, axis=1)


def assemble(kind: str, grid: Grid) -> sp.csr_matrix:
    """Symmetric positive-definite interior matrix W (-L), W the row scaling."""
    _check(kind, grid)
    h1, h2 = grid.spacing
    m1, m2 = grid.shape[0] - 2, grid.shape[1] - 2

    def second_difference(m, h):
        return sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / (h * h)

    t2 = second_difference(m2, h2)
    if kind == "laplacian-xy":
        a = sp.kron(second_difference(m1, h1), sp.identity(m2)) + sp.kron(sp.identity(m1), t2)
    else:
        r = grid.axes()[0][1:-1]
        rp, rm = 1.0 / (r + 0.5 * h1), 1.0 / (r - 0.5 * h1)
        # row i couples to i-1 through 1/r_{i-1/2} and to i+1 through 1/r_{i+1/2}
        t1 = sp.diags([-rm[1:], rp + rm, -rp[:-1]], [-1, 0, 1]) / (h1 * h1)
        a = sp.kron(t1, sp.identity(m2)) + sp.kron(sp.diags(1.0 / r), t2)
    return sp.csr_matrix(a)


def _boundary_only(values):
    out = np.array(values, dtype=float, copy=True)
    out[1:-1, 1:-1] = 0.0
    return out


# -- linear solver ----------------------------------------------------------


class LinearSolver:
    """Preconditioned conjugate gradients for W (-L) x = W b with fixed boundary data."""

    def __init__(self, kind: str, grid: Grid, options: SolverOptions):
        self.kind, self.grid, self.options = kind, grid, options
        self.matrix = assemble(kind, grid)
        self.weights = _weights(kind, grid)
        self.precond = None
        if options.preconditioner == "amg" and self.matrix.shape[0] > 64:
            import pyamg

            smoother = ("gauss_seidel", {"sweep": "symmetric"})
            # local weighting avoids the randomly started spectral-radius estimate,
            # so the hierarchy (and every solve) is reproducible bit for bit
            ml = pyamg.smoothed_aggregation_solver(
                self.matrix, symmetry="symmetric", presmoother=smoother, postsmoother=smoother,
                smooth=("jacobi", {"omega": 4.0 / 3.0, "weighting": "local"}),
            )
            self.precond = ml.aspreconditioner(cycle="V")

    def solve(self, rhs_interior, boundary_values, x0=None):
        """Solve -L Psi = rhs on the interior with Psi = boundary_values on the edge."""
        bnd = _boundary_only(boundary_values)
        lift = _apply(self.kind, bnd, self.grid)
        b = ((rhs_interior - lift) * self.weights).ravel()
        x, its = pcg(self.matrix, b, x0=None if x0 is None else x0[1:-1, 1:-1].ravel(),
                     precond=self.precond, rtol=self.options.cg_tol, max_iter=self.options.cg_max_iter)
        out = bnd
        out[1:-1, 1:-1] = x.reshape(self.weights.shape)
        return out, its


def pcg(a, b, x0=None, precond=None, rtol=1e-12, max_iter=2000, callback=None):
    """Preconditioned conjugate gradients; returns (x, iterations).

    Stops when ||b - A x|| <= rtol ||b||.  Raises ConvergenceError otherwise.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    r = b - a @ x
    history = [float(np.linalg.norm(r)) / bnorm]
    if history[0] <= rtol:
        return x, 0
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iter + 1):
        ap = a @ p
        pap = float(p @ ap)
        if not pap > 0:
            raise ConvergenceError("CG breakdown: matrix is not positive definite", history)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if callback is not None:
            callback(x)
        res = float(np.linalg.norm(r)) / bnorm
        history.append(res)
        if res <= rtol:
            return x, k
        z = precond(r) if precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not converge in {max_iter} iterations (residual {history[-1]:.3g})", history)


# -- nonlinear solve --------------------------------------------------------


def nonlinear_residual(p: SemilinearProblem, values) -> np.ndarray:
    """-L Psi - g(Psi) - S at interior nodes."""
    inner = values[1:-1, 1:-1]
    res = _apply(p.operator, values, p.grid) - p.g(inner)
    if p.source is not None:
        res = res - p.source.values[1:-1, 1:-1]
    return res


def _max_norm(a) -> float:
    return float(np.abs(a).max()) if a.size else 0.0


def solve_semilinear(p: SemilinearProblem, init: ScalarChartField, solver: LinearSolver | None = None):
    """Damped Picard (default) or Newton iteration; returns ``(Psi, SolveReport)``.

    Stops when the max-norm of the nonlinear residual drops below ``tol``.
    Raises :class:`StagnationError` when the residual has not improved for
    ``stagnation_window`` iterations; returns ``converged=False`` if
    ``max_iter`` is reached while still improving.
    """
    grid = p.grid
    if not init.grid.matches(grid):
        raise ValueError("initial iterate lives on a different grid")
    bnd = _boundary_only(p.dirichlet.values)
    init_bnd = _boundary_only(init.values)
    scale = max(1.0, _max_norm(bnd))
    if np.abs(init_bnd - bnd).max() > 1e-12 * scale:
        raise ValueError("initial iterate does not satisfy the Dirichlet data")
    opts = p.options
    psi = np.array(init.values, dtype=float)
    res = _max_norm(nonlinear_residual(p, psi))
    history, cg_its = [res], []
    if res < opts.tol:
        return init.like(psi, "psi"), SolveReport(True, 0, history, cg_its, opts.method, "initial iterate converged")
    if opts.method == "newton":
        return _newton(p, psi, init, history)
    solver = solver or LinearSolver(p.operator, grid, opts)
    best, best_at = res, 0
    source = 0.0 if p.source is None else p.source.values[1:-1, 1:-1]
    for k in range(1, opts.max_iter + 1):
        rhs = p.g(psi[1:-1, 1:-1]) + source
        new, its = solver.solve(rhs, bnd, x0=psi)
        cg_its.append(its)
        psi = opts.omega * new + (1.0 - opts.omega) * psi
        res = _max_norm(nonlinear_residual(p, psi))
        history.append(res)
        if not math.isfinite(res):
            raise ConvergenceError("nonlinear residual is not finite", history)
        if res < opts.tol:
            return init.like(psi, "psi"), SolveReport(True, k, history, cg_its, "picard")
        if res < best:
            best, best_at = res, k
        elif k - best_at >= opts.stagnation_window:
            raise StagnationError(
                f"residual stalled at {best:.3g} for {opts.stagnation_window} iterations", history
            )
    log.info("picard stopped at max_iter with residual %.3g", history[-1])
    return init.like(psi, "psi"), SolveReport(False, opts.max_iter, history, cg_its, "picard", "max_iter reached")


def _newton(p: SemilinearProblem, psi, init, history):
    """Semi-smooth Newton with backtracking on the residual max-norm.

    The Jacobian -L - g'(Psi) is indefinite on nontrivial branches, so the
    linear steps use a sparse direct factorization instead of CG.
    """
    opts = p.options
    grid = p.grid
    mat = assemble(p.operator, grid)
    w = _weights(p.operator, grid)
    shape = w.shape
    best, best_at = history[-1], 0
    for k in range(1, opts.max_iter + 1):
        f = nonlinear_residual(p, psi)
        jac = mat - sp.diags((w * p.g_prime(psi[1:-1, 1:-1])).ravel())
        try:
            step = spla.spsolve(sp.csc_matrix(jac), -(w * f).ravel()).reshape(shape)
        except RuntimeError as exc:  # singular factorization
            raise ConvergenceError(f"Newton step failed: {exc}", history) from exc
        if not np.all(np.isfinite(step)):
            raise ConvergenceError("Newton step is not finite", history)
        lam, current = 1.0, history[-1]
        while True:
            trial = psi.copy()
            trial[1:-1, 1:-1] += lam * step
            res = _max_norm(nonlinear_residual(p, trial))
            if res < current or lam < 1e-4:
                break
            lam *= 0.5
        psi = trial
        history.append(res)
        if res < opts.tol:
            return init.like(psi, "psi"), SolveReport(True, k, history, [], "newton")
        if res < best:
            best, best_at = res, k
        elif k - best_at >= opts.stagnation_window:
            raise StagnationError(f"Newton residual stalled at {best:.3g}", history)
    return init.like(psi, "psi"), SolveReport(False, opts.max_iter, history, [], "newton", "max_iter reached")


def with_options(p: SemilinearProblem, **changes) -> SemilinearProblem:
    return replace(p, options=replace(p.options, **changes))
