"""Level curves of f in its symmetry plane and the charts swept by the gradient flow.

Three surface families are supported, named after the level surfaces they
produce in R^3:

``cyl``     f = f(r, theta), plane (x1, x2); Phi = (x1, x2, xi2), xi2 = x3.
``rev``     f = f(r, z), plane (r, z);       Phi = (r cos xi2, r sin xi2, z).
``conoid``  f = f(theta, z), plane (theta, z); Phi = (xi2 cos theta, xi2 sin theta, z), xi2 = r.

A level curve is advected by X = grad f / |grad f|^2 so that f(Phi(xi, t)) = c + t.
In the conoid case |grad f| depends on r, so the chart is stored per xi2 slice.
Array layout of a chart: (t, xi2, xi1, plane component).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from skimage.measure import find_contours

from .errors import DegenerateChartError
from .fields import ChartTag, ScalarChartField, grad, interpolate_stack
from .fieldio import format_rows

EPS = 1e-8


class Case(str, Enum):
    CYL = "cyl"
    REV = "rev"
    CONOID = "conoid"


CASE_CHART = {Case.CYL: ChartTag.CARTESIAN_XY, Case.REV: ChartTag.MERIDIONAL_RZ, Case.CONOID: ChartTag.THETA_Z}
_CHART_CASE = {v: k for k, v in CASE_CHART.items()}


# -- factor access ------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticFactor:
    """f and its plane gradient as callables of the two plane coordinates."""

    value: Callable
    gradient: Callable
    chart: ChartTag = ChartTag.CARTESIAN_XY

    def __call__(self, a, b):
        return np.asarray(self.value(a, b), dtype=float)

    def grad(self, a, b):
        g1, g2 = self.gradient(a, b)
        return np.broadcast_to(g1, np.shape(a)).astype(float), np.broadcast_to(g2, np.shape(a)).astype(float)


@dataclass(frozen=True, eq=False)
class GridFactor:
    """Sampled f: bilinear interpolation of f and of its grid gradient, or a cubic spline."""

    field: ScalarChartField
    interpolation: str = "linear"

    def __post_init__(self):
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.interpolation == "linear":
            g1, g2 = grad(self.field)
            object.__setattr__(self, "_arrays", [self.field.values, g1.values, g2.values])
        else:
            a1, a2 = self.field.grid.axes()
            object.__setattr__(self, "_spline", RectBivariateSpline(a1, a2, self.field.values, kx=3, ky=3, s=0))

    @property
    def chart(self):
        return self.field.chart

    def _stack(self, a, b):
        return np.stack([np.asarray(a, dtype=float), np.asarray(b, dtype=float)], axis=-1)

    def __call__(self, a, b):
        if self.interpolation == "linear":
            return interpolate_stack(self.field.grid, self._arrays[:1], self._stack(a, b))[0]
        self._check_inside(a, b)
        return self._spline.ev(a, b)

    def grad(self, a, b):
        if self.interpolation == "linear":
            _, g1, g2 = interpolate_stack(self.field.grid, self._arrays, self._stack(a, b))
            return g1, g2
        self._check_inside(a, b)
        return self._spline.ev(a, b, dx=1), self._spline.ev(a, b, dy=1)

    def _check_inside(self, a, b, slack=1e-6):
        g = self.field.grid
        for x, lo, hi, h in zip((a, b), g.origin, g.upper, g.spacing):
            x = np.asarray(x)
            if x.size and (x.min() < lo - slack * h or x.max() > hi + slack * h):
                raise ValueError("interpolation point outside the grid")


def as_factor(f, interpolation: str = "linear"):
    if isinstance(f, (AnalyticFactor, GridFactor)):
        return f
    if isinstance(f, ScalarChartField):
        return GridFactor(f, interpolation)
    raise TypeError(f"unsupported factor {type(f).__name__}")


def flow_velocity(factor, case: Case, pts: np.ndarray, r=None):
    """X = grad f / |grad f|^2 in plane coordinates, and |grad f|.

    ``pts`` has shape (..., 2); for the conoid case ``r`` broadcasts against
    ``pts[..., 0]`` and the metric of the (theta, z) plane at radius r is used.
    """
    g1, g2 = factor.grad(pts[..., 0], pts[..., 1])
    if case is Case.CONOID:
        n2 = (g1 / r) ** 2 + g2**2
        x = np.stack([g1 / (r * r) / np.where(n2 > 0, n2, 1.0), g2 / np.where(n2 > 0, n2, 1.0)], axis=-1)
    else:
        n2 = g1**2 + g2**2
        x = np.stack([g1, g2], axis=-1) / np.where(n2 > 0, n2, 1.0)[..., None]
    return x, np.sqrt(n2)


# -- curves --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevelCurve:
    """Samples xi1 -> Phi_0(xi1) of a level curve in plane coordinates."""

    case: Case
    xi1: np.ndarray
    points: np.ndarray
    level: float
    closed: bool

    def __post_init__(self):
        object.__setattr__(self, "case", Case(self.case))
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != np.size(self.xi1):
            raise ValueError("points must be (N, 2) and match xi1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("curve samples must be finite")

    @property
    def spacing(self) -> float:
        return float(self.xi1[1] - self.xi1[0])

    @property
    def coords(self) -> np.ndarray:
        """(r, theta) for cyl curves (theta unwrapped), plane coordinates otherwise."""
        if self.case is Case.CYL:
            x, y = self.points.T
            return np.stack([np.hypot(x, y), np.unwrap(np.arctan2(y, x))], axis=-1)
        return self.points

    def tangent(self) -> np.ndarray:
        return xi1_derivative(self.points, self.spacing, self.closed, axis=0)

    def closure_gap(self) -> float:
        """Distance from the last sample back to the first; shrinks like 1/N for closed curves."""
        if not self.closed:
            return float("nan")
        return float(np.linalg.norm(self.points[0] - self.points[-1]))


def xi1_derivative(a: np.ndarray, h: float, closed: bool, axis: int) -> np.ndarray:
    """Centered differences in xi1, periodic for closed curves, one-sided ends otherwise."""
    if closed:
        return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) / (2 * h)
    return np.gradient(a, h, axis=axis, edge_order=2)


def _arc_resample(pts, n, closed, oversample=16):
    """Resample a polyline to n points equally spaced in arc length (spline interpolated)."""
    if closed:
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        # drop repeated vertices (marching squares repeats grid nodes it passes through)
        pts = pts[seg > 1e-14 * max(1.0, float(np.abs(pts).max()))]
        loop = np.vstack([pts, pts[:1]])
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(loop, axis=0), axis=1))])
        spline = CubicSpline(s, loop, bc_type="periodic", axis=0)
    else:
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 1e-14])
        pts = pts[keep]
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        spline = CubicSpline(s, pts, bc_type="not-a-knot", axis=0)
    fine = np.linspace(0.0, s[-1], oversample * n + 1)
    fp = spline(fine)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(fp, axis=0), axis=1))])
    length = arc[-1]
    targets = np.linspace(0.0, length, n, endpoint=not closed) if not closed else length * np.arange(n) / n
    return spline(np.interp(targets, arc, fine)), length


def _project(spline, pts, c, iterations=4):
    """Newton steps along the gradient onto {spline = c}."""
    p = pts.copy()
    for _ in range(iterations):
        v = spline.ev(p[:, 0], p[:, 1]) - c
        g1, g2 = spline.ev(p[:, 0], p[:, 1], dx=1), spline.ev(p[:, 0], p[:, 1], dy=1)
        n2 = g1 * g1 + g2 * g2
        n2 = np.where(n2 > 0, n2, 1.0)
        p[:, 0] -= v * g1 / n2
        p[:, 1] -= v * g2 / n2
    return p


def _orientation_sign(case, tangent, flow):
    """Sign of det(d1 Phi, d2 Phi, dt Phi) up to a positive factor."""
    t1, t2 = tangent[..., 0], tangent[..., 1]
    x1, x2 = flow[..., 0], flow[..., 1]
    if case is Case.CYL:
        return t2 * x1 - t1 * x2
    if case is Case.REV:
        return t1 * x2 - t2 * x1
    return -(t1 * x2 - t2 * x1)


def extract_level_curve(f: ScalarChartField, c: float, n_samples: int = 256, eps: float = EPS,
                        case: Case | str | None = None) -> list[LevelCurve]:
    """All components of {f = c} as uniformly (arc-length) sampled, oriented curves.

    Marching squares gives the raw polylines; samples are then projected
    onto the level set of the bicubic interpolant of f so the tangent is
    second-order accurate.  Closed curves get xi1 in [0, 2 pi), open ones
    xi1 in [0, L].
    """
    if case is None:
        if f.chart not in _CHART_CASE:
            raise ValueError(f"level curves need a plane chart, not {f.chart.value}")
        case = _CHART_CASE[f.chart]
    case = Case(case)
    if CASE_CHART[case] is not f.chart:
        raise ValueError(f"case {case.value} needs a {CASE_CHART[case].value} factor")
    v = f.values
    if not (v.min() <= c <= v.max()):
        raise ValueError(f"level {c} outside the range of f [{v.min():g}, {v.max():g}]")
    a1, a2 = f.grid.axes()
    spline = RectBivariateSpline(a1, a2, v, kx=3, ky=3, s=0)
    origin, spacing = np.asarray(f.origin), np.asarray(f.spacing)
    curves = []
    for raw in find_contours(v, c):
        pts = origin + raw * spacing
        closed = bool(np.allclose(pts[0], pts[-1], atol=1e-12 * max(1.0, np.abs(pts).max())))
        if closed:
            pts = pts[:-1]
        if len(pts) < 4:
            continue
        for _ in range(2):
            pts, length = _arc_resample(pts, n_samples, closed)
            pts = _project(spline, pts, c)
            if not closed:
                pts = np.clip(pts, origin, np.asarray(f.grid.upper))
        g1, g2 = spline.ev(pts[:, 0], pts[:, 1], dx=1), spline.ev(pts[:, 0], pts[:, 1], dy=1)
        gnorm = np.hypot(g1, g2)
        if gnorm.min() < eps:
            raise DegenerateChartError(f"|grad f| = {gnorm.min():.3g} < {eps:g} on the level {c}")
        xi1 = 2 * np.pi * np.arange(n_samples) / n_samples if closed else np.linspace(0.0, length, n_samples)
        h = xi1[1] - xi1[0]
        tangent = xi1_derivative(pts, h, closed, axis=0)
        # for the conoid the sign does not depend on r, so the plane gradient will do
        flow = np.stack([g1, g2], axis=-1)
        if np.mean(np.sign(_orientation_sign(case, tangent, flow))) < 0:
            pts = np.roll(pts[::-1], 1, axis=0) if closed else pts[::-1]
        curves.append(LevelCurve(case, xi1, pts, float(c), closed))
    if not curves:
        raise ValueError(f"no contour of f at level {c}")
    return curves


# -- charts --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurfaceChart:
    """Phi(xi1, t) (per xi2 slice for the conoid case) with derivatives and metric data."""

    case: Case
    level: float
    closed: bool
    xi1: np.ndarray
    t: np.ndarray
    xi2: np.ndarray | None
    phi: np.ndarray
    d1: np.ndarray
    dt: np.ndarray
    grad_norm: np.ndarray
    level_defect: np.ndarray
    interpolation: str = "analytic"
    chi: np.ndarray | None = None
    nu: np.ndarray | None = None
    checks: dict = field(default_factory=dict)

    @property
    def p(self):
        return None if self.chi is None else self.chi / self.nu

    @property
    def q(self):
        return None if self.chi is None else self.chi * self.nu

    @property
    def h1(self) -> float:
        return float(self.xi1[1] - self.xi1[0])

    @property
    def t0(self) -> float:
        return float(self.t[-1])

    def radius(self) -> np.ndarray:
        """Cylindrical radius of the chart points, shape (T, M, N)."""
        if self.case is Case.CYL:
            return np.hypot(self.phi[..., 0], self.phi[..., 1])
        if self.case is Case.REV:
            return self.phi[..., 0]
        return np.broadcast_to(self.xi2[None, :, None], self.phi.shape[:-1])

    def metric(self):
        """(G11, G12, G22) of the induced metric in (xi1, xi2) coordinates."""
        a, b = self.d1[..., 0], self.d1[..., 1]
        r = self.radius()
        if self.case is Case.CYL:
            return a * a + b * b, np.zeros_like(a), np.ones_like(a)
        if self.case is Case.REV:
            return a * a + b * b, np.zeros_like(a), r * r
        return r * r * a * a + b * b, np.zeros_like(a), np.ones_like(a)

    def slice_t(self, k: int) -> "SurfaceChart":
        sl = slice(k, k + 1)
        extra = {} if self.chi is None else {"chi": self.chi[sl], "nu": self.nu[sl]}
        return replace(self, t=self.t[sl], phi=self.phi[sl], d1=self.d1[sl], dt=self.dt[sl],
                       grad_norm=self.grad_norm[sl], level_defect=self.level_defect[sl], **extra)


def _segments_intersect(pts: np.ndarray) -> bool:
    """True if two non-adjacent edges of the closed polygon cross."""
    a = pts
    b = np.roll(pts, -1, axis=0)
    n = len(a)
    d = b - a
    ex = a[None, :, :] - a[:, None, :]
    cross = d[:, 0, None] * d[None, :, 1] - d[:, 1, None] * d[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (ex[..., 0] * d[None, :, 1] - ex[..., 1] * d[None, :, 0]) / cross
        u = (ex[..., 0] * d[:, 1, None] - ex[..., 1] * d[:, 0, None]) / cross
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    gap = np.abs(i - j)
    far = (gap > 1) & (gap < n - 1)
    hit = far & (cross != 0) & (s > 0) & (s < 1) & (u > 0) & (u < 1)
    return bool(np.any(hit))


def evolve_chart(curve: LevelCurve, f, t0: float, steps: int, interpolation: str = "linear",
                 xi2=None, eps: float = EPS, check_every: int | None = None,
                 defect_tol: float = 0.1) -> SurfaceChart:
    """RK4 advection of the curve samples under X = grad f / |grad f|^2 for 0 <= t <= t0.

    ``f`` is a ScalarChartField (interpolated as requested) or an
    AnalyticFactor.  For the conoid case ``xi2`` lists the radii of the slices.
    A step that leaves the level set by more than ``defect_tol * t0`` (the
    flow jumped across a critical point of f) raises DegenerateChartError.
    """
    if steps < 1 or not t0 > 0:
        raise ValueError("need t0 > 0 and at least one step")
    factor = as_factor(f, interpolation)
    if factor.chart is not CASE_CHART[curve.case]:
        raise ValueError("factor chart does not match the curve case")
    if curve.case is Case.CONOID:
        if xi2 is None:
            raise ValueError("conoid charts need xi2 (radii of the slices)")
        xi2 = np.asarray(xi2, dtype=float)
        if np.any(xi2 <= 0):
            raise ValueError("conoid radii must be positive")
        r = xi2[:, None]
    else:
        xi2, r = None, None
    m = 1 if xi2 is None else xi2.size
    dt = t0 / steps
    y = np.broadcast_to(curve.points, (m,) + curve.points.shape).copy()
    t = dt * np.arange(steps + 1)
    phi = np.empty((steps + 1,) + y.shape)
    vel = np.empty_like(phi)
    gnorm = np.empty(phi.shape[:-1])
    defect = np.empty(steps + 1)
    check_every = check_every or max(1, steps // 20)

    def rhs(z):
        x, gn = flow_velocity(factor, curve.case, z, r)
        if gn.min() < eps:
            raise DegenerateChartError(f"|grad f| fell below {eps:g} during the flow")
        return x, gn

    for k in range(steps + 1):
        x, gn = rhs(y)
        phi[k], vel[k], gnorm[k] = y, x, gn
        defect[k] = np.abs(factor(y[..., 0], y[..., 1]) - (curve.level + t[k])).max()
        if defect[k] > defect_tol * t0:
            raise DegenerateChartError(f"chart left the level set (defect {defect[k]:.3g} at t = {t[k]:g})")
        if curve.closed and (k % check_every == 0 or k == steps):
            if any(_segments_intersect(sl) for sl in y):
                raise DegenerateChartError(f"chart folds: curve self-intersects at t = {t[k]:g}")
        if k == steps:
            break
        k1 = x
        k2, _ = rhs(y + 0.5 * dt * k1)
        k3, _ = rhs(y + 0.5 * dt * k2)
        k4, _ = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise DegenerateChartError("non-finite chart coordinates")
    d1 = xi1_derivative(phi, curve.spacing, curve.closed, axis=2)
    return SurfaceChart(curve.case, curve.level, curve.closed, curve.xi1, t, xi2, phi, d1, vel, gnorm, defect,
                        interpolation if isinstance(factor, GridFactor) else "analytic")


def chart_coefficients(chart: SurfaceChart, eps: float = EPS) -> SurfaceChart:
    """Fill chi, nu (p = chi / nu and q = chi nu follow) from the case formulas.

    Cross-checks: chi against 1 / |grad f| along Phi, and chi against the
    speed of Phi obtained by differencing in t.
    """
    a1, b1 = chart.d1[..., 0], chart.d1[..., 1]
    at, bt = chart.dt[..., 0], chart.dt[..., 1]
    if chart.case is Case.CYL:
        x, y = chart.phi[..., 0], chart.phi[..., 1]
        r = np.hypot(x, y)
        r1, th1 = (x * a1 + y * b1) / r, (x * b1 - y * a1) / (r * r)
        rt, tht = (x * at + y * bt) / r, (x * bt - y * at) / (r * r)
        chi = np.sqrt(rt**2 + r**2 * tht**2)
        nu = np.sqrt(r1**2 + r**2 * th1**2)
        fd = np.gradient(chart.phi, chart.t, axis=0, edge_order=2) if chart.t.size > 2 else None
        speed_fd = None if fd is None else np.hypot(fd[..., 0], fd[..., 1])
    elif chart.case is Case.REV:
        r = chart.phi[..., 0]
        chi = np.hypot(at, bt)
        nu = np.hypot(a1, b1) / r
        fd = np.gradient(chart.phi, chart.t, axis=0, edge_order=2) if chart.t.size > 2 else None
        speed_fd = None if fd is None else np.hypot(fd[..., 0], fd[..., 1])
    else:
        r = chart.radius()
        chi = np.sqrt(r**2 * at**2 + bt**2)
        nu = np.sqrt(r**2 * a1**2 + b1**2)
        fd = np.gradient(chart.phi, chart.t, axis=0, edge_order=2) if chart.t.size > 2 else None
        speed_fd = None if fd is None else np.sqrt(r**2 * fd[..., 0] ** 2 + fd[..., 1] ** 2)
    if chi.min() < eps or nu.min() < eps:
        raise DegenerateChartError(f"degenerate chart: min chi {chi.min():.3g}, min nu {nu.min():.3g}")
    checks = dict(chart.checks)
    checks["chi_vs_inverse_gradient"] = float(np.abs(chi - 1.0 / chart.grad_norm).max())
    if speed_fd is not None:
        checks["chi_vs_time_difference"] = float(np.abs(chi - speed_fd).max())
    p, q = chi / nu, chi * nu
    checks["p_bounds"] = [[float(a), float(b)] for a, b in zip(p.min(axis=(1, 2)), p.max(axis=(1, 2)))]
    checks["q_bounds"] = [[float(a), float(b)] for a, b in zip(q.min(axis=(1, 2)), q.max(axis=(1, 2)))]
    return replace(chart, chi=chi, nu=nu, checks=checks)


def write_chart(path, chart: SurfaceChart) -> Path:
    """CSV dump (xi1, xi2, t, coords, chi, nu, p, q) after a JSON metadata line."""
    path = Path(path)
    if chart.chi is None:
        chart = chart_coefficients(chart)
    T, M, N = chart.phi.shape[:3]
    tt, mm, nn = np.meshgrid(chart.t, np.arange(M), chart.xi1, indexing="ij")
    x2 = np.zeros_like(tt) if chart.xi2 is None else chart.xi2[mm]
    meta = {
        "case": chart.case.value,
        "level": chart.level,
        "t0": chart.t0,
        "closed": chart.closed,
        "steps": int(T - 1),
        "interpolation": chart.interpolation,
        "max_level_defect": float(chart.level_defect.max()),
        "checks": chart.checks,
        "columns": ["xi1", "xi2", "t", "coord1", "coord2", "chi", "nu", "p", "q"],
    }
    cols = [nn, x2, tt, chart.phi[..., 0], chart.phi[..., 1], chart.chi, chart.nu, chart.p, chart.q]
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        fh.write(format_rows(cols))
    return path
