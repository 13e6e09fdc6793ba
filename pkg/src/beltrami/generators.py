"""Ground-truth Beltrami fields.

* ABC flows (constant factor).
* Axisymmetric fields with a radial factor f(r), from the ODE pair
  d(u_z)/dr = -f u_theta,  d(u_theta)/dr = f u_z - u_theta / r.
* Planar harmonic fields rotated along x3 by the integral of f(x3).
* Reconstruction from a stream function in the translational and
  axisymmetric reductions.
* The spherical vortex with swirl, a closed-form solution of the
  axisymmetric free-boundary problem with Gamma(s) = lambda * max(s, 0).
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq
from scipy.special import spherical_jn

from .errors import NumericalFailure
from .fields import ChartTag, Grid, ScalarChartField, SymmetricVectorField, grad
from .profiles import Profile

RadialProfile = Profile


def cube_grid(n: int, length: float = 2 * np.pi, lo: float = 0.0) -> Grid:
    return Grid.uniform(ChartTag.FULL_3D, (lo,) * 3, (lo + length,) * 3, (n,) * 3)


def abc_field(A: float, B: float, C: float, grid: Grid) -> SymmetricVectorField:
    """u = (A sin x3 + C cos x2, B sin x1 + A cos x3, C sin x2 + B cos x1); curl u = u."""
    if grid.chart is not ChartTag.FULL_3D:
        raise ValueError("abc_field needs a full-3d grid")
    x, y, z = grid.mesh()
    vals = (
        A * np.sin(z) + C * np.cos(y),
        B * np.sin(x) + A * np.cos(z),
        C * np.sin(y) + B * np.cos(x),
    )
    comps = tuple(grid.field(v, n) for v, n in zip(vals, ("u1", "u2", "u3")))
    return SymmetricVectorField("none", comps, name="abc")


def _as_function(f):
    if isinstance(f, (int, float)):
        return lambda s: np.full_like(np.asarray(s, dtype=float), float(f))
    return f


def radial_beltrami_profiles(f, r_range, init, step=1e-3):
    """RK4 for (u_theta, u_z)(r); returns (r, u_theta, u_z) on the step nodes."""
    r0, r1 = map(float, r_range)
    if not 0 < r0 < r1:
        raise ValueError("need 0 < r0 < r1")
    n = max(1, int(np.ceil((r1 - r0) / step - 1e-9)))
    h = (r1 - r0) / n
    fn = _as_function(f)

    def rhs(r, y):
        fr = float(fn(r))
        return np.array([fr * y[1] - y[0] / r, -fr * y[0]])

    r = r0 + h * np.arange(n + 1)
    out = np.empty((n + 1, 2))
    y = np.array(init, dtype=float)
    out[0] = y
    for k in range(n):
        rk = r[k]
        k1 = rhs(rk, y)
        k2 = rhs(rk + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(rk + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(rk + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalFailure(f"radial ODE blew up at r = {r[k + 1]:g}")
        out[k + 1] = y
    return r, out[:, 0], out[:, 1]


def radial_beltrami(f, r_range, init, step=1e-3, nz=5) -> SymmetricVectorField:
    """Axisymmetric swirling field u_theta(r) e_theta + u_z(r) e_z with factor f(r).

    The meridional grid reuses the ODE nodes in r and ``nz`` nodes in z with
    the same spacing.
    """
    r, ut, uz = radial_beltrami_profiles(f, r_range, init, step)
    h = r[1] - r[0]
    grid = Grid(ChartTag.MERIDIONAL_RZ, (r[0], 0.0), (h, h), (r.size, nz))
    ones = np.ones(nz)
    comps = (
        grid.field(np.zeros(grid.shape), "u_r"),
        grid.field(np.outer(ut, ones), "u_theta"),
        grid.field(np.outer(uz, ones), "u_z"),
    )
    return SymmetricVectorField("rotational", comps, name="radial")


def radial_factor_field(f, grid: Grid) -> ScalarChartField:
    """Sample a radial factor on a meridional grid."""
    fn = _as_function(f)
    return grid.field(fn(grid.mesh()[0]), "f")


def _planar_pair(v0):
    if isinstance(v0, SymmetricVectorField):
        return v0.components[0], v0.components[1]
    v1, v2 = v0
    return v1, v2


def rotated_harmonic_field(v0, f: Profile, tol: float = 1e-6) -> SymmetricVectorField:
    """Beltrami field with factor f(x3) built from a planar harmonic field v0.

    u(x) = R(-F(x3)) v0(x1, x2) with F the integral of f from 0; the z-nodes
    of the result are the nodes of ``f``.
    """
    v1, v2 = _planar_pair(v0)
    if v1.chart is not ChartTag.CARTESIAN_XY or not v1.grid.matches(v2.grid):
        raise ValueError("v0 must be a pair of fields on one cartesian-xy grid")
    d11, d12 = (d.values for d in grad(v1))
    d21, d22 = (d.values for d in grad(v2))
    inner = v1.grid.interior
    defect = max(np.abs((d11 + d22)[inner]).max(), np.abs((d12 - d21)[inner]).max())
    scale = max(np.abs(a[inner]).max() for a in (d11, d12, d21, d22))
    if defect > tol * max(scale, 1.0):
        raise ValueError(f"v0 is not harmonic: div/rot defect {defect:.3g}")
    comps = (v1.like(v1.values, "v1"), v2.like(v2.values, "v2"))
    return SymmetricVectorField("z-planar", comps, profile=f, name="rotated_harmonic")


def _stream_derivative(values, h, axis):
    """Fourth-order differences: five-point centered inside, five-point one-sided on the edges.

    The velocity is differentiated once more by the residual operators. With a
    second-order velocity the boundary and interior truncation errors differ
    by O(h^2), which the outer difference turns into O(h) on the first
    interior row; a fourth-order velocity keeps that row at O(h^3).
    """
    a = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if a.shape[0] < 5:
        return np.gradient(values, h, axis=axis, edge_order=2)
    o = np.empty_like(a)
    o[2:-2] = (a[:-4] - 8 * a[1:-3] + 8 * a[3:-1] - a[4:]) / (12 * h)
    o[0] = (-25 * a[0] + 48 * a[1] - 36 * a[2] + 16 * a[3] - 3 * a[4]) / (12 * h)
    o[1] = (-3 * a[0] - 10 * a[1] + 18 * a[2] - 6 * a[3] + a[4]) / (12 * h)
    o[-1] = (25 * a[-1] - 48 * a[-2] + 36 * a[-3] - 16 * a[-4] + 3 * a[-5]) / (12 * h)
    o[-2] = (3 * a[-1] + 10 * a[-2] - 18 * a[-3] + 6 * a[-4] - a[-5]) / (12 * h)
    return np.moveaxis(o, 0, axis)


def _stream_gradient(psi: ScalarChartField):
    return tuple(psi.like(_stream_derivative(psi.values, psi.spacing[k], k)) for k in range(2))


def reconstruct_translational(psi: ScalarChartField, u3: Profile):
    """u = (d2 psi, -d1 psi, u3(psi)) and factor f = u3'(psi)."""
    if psi.chart is not ChartTag.CARTESIAN_XY:
        raise ValueError("translational reconstruction needs a cartesian-xy stream function")
    u3.check_domain(psi.values)
    d1, d2 = _stream_gradient(psi)
    comps = (
        psi.like(d2.values, "u1"),
        psi.like(-d1.values, "u2"),
        psi.like(u3(psi.values), "u3"),
    )
    f = psi.like(u3.derivative(psi.values), "f")
    return SymmetricVectorField("translational", comps, name="translational"), f


def reconstruct_rotational(psi: ScalarChartField, gamma: Profile):
    """u = (-d_z psi / r, Gamma(psi) / r, d_r psi / r) and factor f = Gamma'(psi)."""
    if psi.chart is not ChartTag.MERIDIONAL_RZ:
        raise ValueError("rotational reconstruction needs a meridional-rz stream function")
    gamma.check_domain(psi.values)
    r = psi.grid.mesh()[0]
    dr, dz = _stream_gradient(psi)
    comps = (
        psi.like(-dz.values / r, "u_r"),
        psi.like(gamma(psi.values) / r, "u_theta"),
        psi.like(dr.values / r, "u_z"),
    )
    f = psi.like(gamma.derivative(psi.values), "f")
    return SymmetricVectorField("rotational", comps, name="rotational"), f


# -- spherical vortex with swirl ------------------------------------------


def spherical_vortex_root() -> float:
    """First positive zero of the spherical Bessel function j1 (tan x = x)."""
    return brentq(lambda x: np.sin(x) - x * np.cos(x), np.pi + 0.1, 1.5 * np.pi - 1e-9, xtol=1e-15)


def spherical_vortex(r, z, W: float, a: float, z0: float = 0.0):
    """Stream function of the swirling spherical vortex of radius ``a``.

    Inside: A r^2 lam^2 j1(lam rho) / (lam rho), lam = x1 / a; outside: the
    potential flow -(W/2) r^2 (1 - a^3 / rho^3) past the sphere.  It solves
    -(Lap_{z,r} - r^-1 d_r) Psi = lam^2 max(Psi, 0) with far field -W r^2 / 2.
    Returns ``(psi, lam)``.
    """
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float) - z0
    x1 = spherical_vortex_root()
    lam = x1 / a
    amp = -1.5 * W / (lam * lam * (np.sin(x1) / x1))
    rho = np.hypot(r, z)
    x = lam * rho
    safe = np.where(x > 0, x, 1.0)
    j1_over_x = np.where(x > 1e-8, spherical_jn(1, safe) / safe, 1.0 / 3.0)
    inside = amp * r * r * lam * lam * j1_over_x
    with np.errstate(divide="ignore", invalid="ignore"):
        outside = -0.5 * W * r * r * (1.0 - a**3 / np.where(rho > 0, rho, 1.0) ** 3)
    return np.where(rho < a, inside, outside), lam
