"""Grids, chart-tagged fields, finite-difference operators and Beltrami residuals.

All operators use second-order stencils on uniform grids: centered in the
interior and one-sided at the boundary (``numpy.gradient`` with
``edge_order=2``).  Residual norms are taken over interior nodes only.

Array axes follow the chart: ``(x1, x2)`` for ``cartesian-xy``, ``(r, z)``
for ``meridional-rz``, ``(theta, z)`` for ``theta-z`` and ``(x1, x2, x3)``
for ``full-3d``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import ndimage


class ChartTag(str, Enum):
    CARTESIAN_XY = "cartesian-xy"
    MERIDIONAL_RZ = "meridional-rz"
    THETA_Z = "theta-z"
    FULL_3D = "full-3d"


SYMMETRIES = ("translational", "rotational", "z-planar", "none")
_SYMMETRY_CHART = {
    "translational": ChartTag.CARTESIAN_XY,
    "rotational": ChartTag.MERIDIONAL_RZ,
    "z-planar": ChartTag.CARTESIAN_XY,
    "none": ChartTag.FULL_3D,
}


@dataclass(frozen=True)
class Grid:
    chart: ChartTag
    origin: tuple
    spacing: tuple
    shape: tuple

    def __post_init__(self):
        chart = ChartTag(self.chart)
        object.__setattr__(self, "chart", chart)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        ndim = 3 if chart is ChartTag.FULL_3D else 2
        if not (len(self.origin) == len(self.spacing) == len(self.shape) == ndim):
            raise ValueError(f"{chart.value} grids are {ndim}-dimensional")
        if any(not h > 0 for h in self.spacing):
            raise ValueError("grid spacing must be strictly positive")
        if any(n < 1 for n in self.shape):
            raise ValueError("grid must be non-empty")
        if chart is ChartTag.MERIDIONAL_RZ and not self.origin[0] > 0:
            raise ValueError("meridional grids must stay off the axis (r_min > 0)")

    @classmethod
    def uniform(cls, chart, lo: Sequence[float], hi: Sequence[float], shape: Sequence[int]) -> "Grid":
        """Grid whose first and last nodes sit at ``lo`` and ``hi``."""
        spacing = [(b - a) / (n - 1) for a, b, n in zip(lo, hi, shape)]
        return cls(chart, tuple(lo), tuple(spacing), tuple(shape))

    @classmethod
    def meridional(cls, r_max: float, z_lo: float, z_hi: float, nr: int, nz: int) -> "Grid":
        """Staggered meridional grid: r-nodes at (i + 1/2) h, the last one at r_max."""
        hr = r_max / (nr - 0.5)
        hz = (z_hi - z_lo) / (nz - 1)
        return cls(ChartTag.MERIDIONAL_RZ, (0.5 * hr, z_lo), (hr, hz), (nr, nz))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def upper(self) -> tuple:
        return tuple(o + h * (n - 1) for o, h, n in zip(self.origin, self.spacing, self.shape))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def field(self, values, name="s") -> "ScalarChartField":
        return ScalarChartField(self.chart, self.origin, self.spacing, values, name)

    def sample(self, fn, name="s") -> "ScalarChartField":
        return self.field(fn(*self.mesh()), name)

    @property
    def interior(self) -> tuple:
        return tuple(slice(1, -1) for _ in self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def matches(self, other: "Grid", rtol=1e-12) -> bool:
        if self.chart != other.chart or self.shape != other.shape:
            return False
        scale = max(max(abs(x) for x in self.origin + self.spacing), 1.0)
        return all(
            abs(a - b) <= rtol * scale
            for a, b in zip(self.origin + self.spacing, other.origin + other.spacing)
        )

    def header(self) -> dict:
        return {
            "chart": self.chart.value,
            "origin": list(self.origin),
            "spacing": list(self.spacing),
            "shape": list(self.shape),
        }

    def to_index(self, points: np.ndarray) -> np.ndarray:
        """Fractional index coordinates of chart points (last axis = coordinate)."""
        pts = np.asarray(points, dtype=float)
        out = (pts - np.asarray(self.origin)) / np.asarray(self.spacing)
        near = np.abs(out - np.round(out)) < 1e-9
        return np.where(near, np.round(out), out)


@dataclass(frozen=True, eq=False)
class ScalarChartField:
    chart: ChartTag
    origin: tuple
    spacing: tuple
    values: np.ndarray
    name: str = "s"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        grid = Grid(self.chart, self.origin, self.spacing, vals.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"field {self.name!r} has non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "chart", grid.chart)
        object.__setattr__(self, "origin", grid.origin)
        object.__setattr__(self, "spacing", grid.spacing)

    @property
    def grid(self) -> Grid:
        return Grid(self.chart, self.origin, self.spacing, self.values.shape)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def like(self, values, name=None) -> "ScalarChartField":
        return ScalarChartField(self.chart, self.origin, self.spacing, values, name or self.name)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Bilinear (trilinear) interpolation at chart points of shape (..., ndim)."""
        return interpolate_stack(self.grid, [self.values], points)[0]


def interpolate_stack(grid: Grid, arrays: Sequence[np.ndarray], points, slack=1e-6, order: int = 1) -> list[np.ndarray]:
    """Spline interpolation (multilinear for ``order=1``) of several arrays sharing ``grid``.

    Points may lie at most ``slack`` cells outside the grid.
    """
    pts = np.asarray(points, dtype=float)
    idx = grid.to_index(pts)
    flat = idx.reshape(-1, grid.ndim)
    for axis, n in enumerate(grid.shape):
        col = flat[:, axis]
        if col.size and (col.min() < -slack or col.max() > n - 1 + slack):
            raise ValueError("interpolation point outside the grid")
    coords = np.clip(flat, 0, np.asarray(grid.shape) - 1).T
    return [
        ndimage.map_coordinates(a, coords, order=order, mode="nearest").reshape(pts.shape[:-1])
        for a in arrays
    ]


@dataclass(frozen=True, eq=False)
class SymmetricVectorField:
    """A 3D vector field stored through its symmetry-reduced components.

    ``translational``: Cartesian (u1, u2, u3) as functions of (x1, x2).
    ``rotational``: cylindrical (u_r, u_theta, u_z) as functions of (r, z).
    ``z-planar``: (v1, v2)(x1, x2) rotated by -F(x3), F the integral of ``profile``.
    ``none``: Cartesian components on a 3D grid.
    """

    symmetry: str
    components: tuple
    profile: object = None
    name: str = "u"

    def __post_init__(self):
        if self.symmetry not in SYMMETRIES:
            raise ValueError(f"unknown symmetry {self.symmetry!r}")
        comps = tuple(self.components)
        want = 2 if self.symmetry == "z-planar" else 3
        if len(comps) != want:
            raise ValueError(f"{self.symmetry} fields carry {want} components")
        grid = comps[0].grid
        if grid.chart is not _SYMMETRY_CHART[self.symmetry]:
            raise ValueError(f"{self.symmetry} fields live on {_SYMMETRY_CHART[self.symmetry].value} grids")
        if any(not c.grid.matches(grid) for c in comps[1:]):
            raise ValueError("component grids differ")
        if self.symmetry == "z-planar" and self.profile is None:
            raise ValueError("z-planar fields need a factor profile f(z)")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> Grid:
        return self.components[0].grid

    def arrays(self) -> list[np.ndarray]:
        return [c.values for c in self.components]

    def scaled(self, a: float) -> "SymmetricVectorField":
        comps = tuple(c.like(a * c.values) for c in self.components)
        return SymmetricVectorField(self.symmetry, comps, self.profile, self.name)

    # -- evaluation at arbitrary points ---------------------------------
    def rotation_angle(self, z):
        """-F(z) for z-planar fields."""
        return -self.profile.integral(z)

    def evaluate(self, points, order: int = 1) -> np.ndarray:
        """Cartesian vector at Cartesian points of shape (..., 3); ``order`` 3 uses cubic splines."""
        pts = np.asarray(points, dtype=float)
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        if self.symmetry == "none":
            comps = interpolate_stack(self.grid, self.arrays(), pts, order=order)
            return np.stack(comps, axis=-1)
        if self.symmetry == "translational":
            comps = interpolate_stack(self.grid, self.arrays(), pts[..., :2], order=order)
            return np.stack(comps, axis=-1)
        if self.symmetry == "z-planar":
            v1, v2 = interpolate_stack(self.grid, self.arrays(), pts[..., :2], order=order)
            phi = self.rotation_angle(z)
            c, s = np.cos(phi), np.sin(phi)
            return np.stack([c * v1 - s * v2, s * v1 + c * v2, np.zeros_like(v1)], axis=-1)
        r = np.hypot(x, y)
        ur, ut, uz = self._meridional_values(np.stack([r, z], axis=-1), order)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(r > 0, x / np.where(r > 0, r, 1.0), 1.0)
            s = np.where(r > 0, y / np.where(r > 0, r, 1.0), 0.0)
        return np.stack([ur * c - ut * s, ur * s + ut * c, uz], axis=-1)

    def _meridional_values(self, rz, order=1):
        grid = self.grid
        arrays = self.arrays()
        hr = grid.spacing[0]
        if grid.origin[0] < hr * (1 + 1e-9):
            # mirror rows across the axis: u_r, u_theta odd in r, u_z even
            k = 1 if order == 1 else min(order, grid.shape[0])
            parity = (-1.0, -1.0, 1.0)
            arrays = [np.concatenate([p * a[:k][::-1], a], axis=0) for p, a in zip(parity, arrays)]
            grid = _UnsafeGrid(grid.chart, (grid.origin[0] - k * hr, grid.origin[1]), grid.spacing,
                               (grid.shape[0] + k, grid.shape[1]))
        return interpolate_stack(grid, arrays, rz, order=order)

    def to_3d(self, grid: Grid | None = None, order: int = 1) -> "SymmetricVectorField":
        """Resample onto a full 3D Cartesian grid."""
        if grid is None:
            if self.symmetry != "z-planar":
                raise ValueError("a target 3D grid is required")
            g2, prof = self.grid, self.profile
            grid = Grid(ChartTag.FULL_3D, g2.origin + (prof.origin,), g2.spacing + (prof.spacing,),
                        g2.shape + (prof.values.size,))
        if grid.chart is not ChartTag.FULL_3D:
            raise ValueError("to_3d needs a full-3d grid")
        pts = np.stack(grid.mesh(), axis=-1)
        if self.symmetry == "z-planar" and grid.origin[:2] == self.grid.origin and grid.shape[:2] == self.grid.shape:
            # nodes coincide with the planar grid: rotate stored samples exactly
            v1, v2 = (a[:, :, None] for a in self.arrays())
            phi = self.rotation_angle(grid.axes()[2])[None, None, :]
            c, s = np.cos(phi), np.sin(phi)
            vals = [c * v1 - s * v2, s * v1 + c * v2, np.zeros(grid.shape)]
            vals = [np.broadcast_to(v, grid.shape) for v in vals]
        else:
            u = self.evaluate(pts, order)
            vals = [u[..., k] for k in range(3)]
        names = ("u1", "u2", "u3")
        comps = tuple(grid.field(v, n) for v, n in zip(vals, names))
        return SymmetricVectorField("none", comps, name=self.name)


class _UnsafeGrid(Grid):
    """Grid copy allowed to reach r <= 0 (used only for mirrored interpolation)."""

    def __init__(self, chart, origin, spacing, shape):
        object.__setattr__(self, "chart", chart)
        object.__setattr__(self, "origin", tuple(origin))
        object.__setattr__(self, "spacing", tuple(spacing))
        object.__setattr__(self, "shape", tuple(shape))


# -- reports ------------------------------------------------------------


@dataclass
class Entry:
    name: str
    norm_inf: float
    norm_l2: float
    grid_spacing: float

    def __post_init__(self):
        if self.norm_inf < 0 or self.norm_l2 < 0:
            raise ValueError("norms are non-negative")


@dataclass
class DiagnosticReport:
    entries: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, name, norm_inf, norm_l2, grid_spacing=float("nan")) -> Entry:
        e = Entry(name, float(norm_inf), float(norm_l2), float(grid_spacing))
        self.entries.append(e)
        return e

    def __getitem__(self, name) -> Entry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(e.name == name for e in self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def merge(self, other: "DiagnosticReport") -> "DiagnosticReport":
        return DiagnosticReport(self.entries + other.entries, {**self.metadata, **other.metadata})

    def to_dict(self) -> dict:
        return {"entries": [asdict(e) for e in self.entries], "metadata": _jsonable(self.metadata)}

    @classmethod
    def from_dict(cls, data: dict) -> "DiagnosticReport":
        return cls([Entry(**e) for e in data["entries"]], dict(data.get("metadata", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Enum):
        return obj.value
    return obj


def convergence_order(errors: Sequence[float], spacings: Sequence[float]) -> np.ndarray:
    """Observed orders log(e_k / e_{k+1}) / log(h_k / h_{k+1}) between successive levels."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(spacings, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def _norms(report, name, vectors: Sequence[np.ndarray], grid: Grid):
    """Pointwise Euclidean magnitude of the stacked arrays, over interior nodes."""
    inner = grid.interior
    mag2 = sum(np.asarray(v)[inner] ** 2 for v in vectors)
    norm_inf = math.sqrt(float(mag2.max())) if mag2.size else 0.0
    norm_l2 = math.sqrt(float(mag2.sum()) * grid.cell_volume)
    return report.add(name, norm_inf, norm_l2, max(grid.spacing))


# -- operators ------------------------------------------------------------


def _check_size(grid: Grid, minimum=3):
    if min(grid.shape) < minimum:
        raise ValueError(f"grid too small: need at least {minimum} nodes per axis, got {grid.shape}")


def _d(values, spacing, axis):
    return np.gradient(values, spacing[axis], axis=axis, edge_order=2)


def grad(s: ScalarChartField) -> tuple:
    """Partial derivatives along each grid axis."""
    _check_size(s.grid)
    return tuple(
        s.like(_d(s.values, s.spacing, k), f"d{k + 1}_{s.name}") for k in range(s.values.ndim)
    )


def curl3(u: SymmetricVectorField) -> SymmetricVectorField:
    if u.symmetry == "z-planar":
        raise ValueError("curl3 does not accept z-planar fields; resample with to_3d() first")
    g = u.grid
    _check_size(g)
    a, b, c = u.arrays()
    h = g.spacing
    if u.symmetry == "none":
        vals = (
            _d(c, h, 1) - _d(b, h, 2),
            _d(a, h, 2) - _d(c, h, 0),
            _d(b, h, 0) - _d(a, h, 1),
        )
    elif u.symmetry == "translational":
        vals = (_d(c, h, 1), -_d(c, h, 0), _d(b, h, 0) - _d(a, h, 1))
    else:
        r = g.mesh()[0]
        vals = (-_d(b, h, 1), _d(a, h, 1) - _d(c, h, 0), _d(b, h, 0) + b / r)
    comps = tuple(comp.like(v, f"curl_{comp.name}") for comp, v in zip(u.components, vals))
    return SymmetricVectorField(u.symmetry, comps, name=f"curl_{u.name}")


def div(u: SymmetricVectorField) -> ScalarChartField:
    if u.symmetry == "z-planar":
        raise ValueError("div does not accept z-planar fields; resample with to_3d() first")
    g = u.grid
    _check_size(g)
    a, b, c = u.arrays()
    h = g.spacing
    if u.symmetry == "none":
        out = _d(a, h, 0) + _d(b, h, 1) + _d(c, h, 2)
    elif u.symmetry == "translational":
        out = _d(a, h, 0) + _d(b, h, 1)
    else:
        r = g.mesh()[0]
        out = _d(a, h, 0) + a / r + _d(c, h, 1)
    return g.field(out, f"div_{u.name}")


def laplacian_interior(values: np.ndarray, spacing) -> np.ndarray:
    """Standard (2d+1)-point Laplacian at interior nodes."""
    inner = tuple(slice(1, -1) for _ in range(values.ndim))
    out = np.zeros(tuple(n - 2 for n in values.shape))
    for k, h in enumerate(spacing):
        lo = list(inner)
        hi = list(inner)
        lo[k] = slice(0, -2)
        hi[k] = slice(2, None)
        out += (values[tuple(hi)] - 2.0 * values[inner] + values[tuple(lo)]) / (h * h)
    return out


def _prepare(u: SymmetricVectorField, f):
    """Return a field with computable derivatives and f sampled on its grid."""
    if u.symmetry == "z-planar":
        if f is None:
            f = u.profile
        u = u.to_3d()
    g = u.grid
    if isinstance(f, (int, float, np.floating, np.integer)):
        return u, np.full(g.shape, float(f))
    if isinstance(f, ScalarChartField):
        if not f.grid.matches(g):
            raise ValueError("incompatible grids: factor and field differ")
        return u, f.values
    if hasattr(f, "derivative") and hasattr(f, "nodes"):
        mesh = g.mesh()
        coord = mesh[0] if u.symmetry == "rotational" else mesh[-1]
        if u.symmetry == "translational":
            raise ValueError("a 1D profile factor is ambiguous for translational fields")
        return u, np.asarray(f(coord), dtype=float)
    raise ValueError(f"unsupported factor type {type(f).__name__}")


def beltrami_residual(u: SymmetricVectorField, f) -> DiagnosticReport:
    """Norms of curl u - f u and div u over interior nodes.

    ``f`` may be a number, a field on the same grid, or (z-planar and
    rotational fields) a one-variable profile in z or r respectively.
    """
    u, fv = _prepare(u, f)
    c = curl3(u)
    res = [cv - fv * uv for cv, uv in zip(c.arrays(), u.arrays())]
    report = DiagnosticReport(metadata={"symmetry": u.symmetry, "grid": u.grid.header()})
    _norms(report, "curl_minus_fu", res, u.grid)
    _norms(report, "divergence", [div(u).values], u.grid)
    return report


def _factor_gradient(u, fv):
    g = u.grid
    if np.all(fv == fv.flat[0]):
        return [np.zeros(g.shape)] * 3
    parts = [_d(fv, g.spacing, k) for k in range(g.ndim)]
    if u.symmetry == "none":
        return parts
    if u.symmetry == "translational":
        return [parts[0], parts[1], np.zeros(g.shape)]
    return [parts[0], np.zeros(g.shape), parts[1]]


def first_integral_defect(u: SymmetricVectorField, f) -> DiagnosticReport:
    """Norm of u . grad f (f is transported along the flow)."""
    u, fv = _prepare(u, f)
    _check_size(u.grid)
    gf = _factor_gradient(u, fv)
    dot = sum(a * b for a, b in zip(u.arrays(), gf))
    report = DiagnosticReport(metadata={"symmetry": u.symmetry, "grid": u.grid.header()})
    _norms(report, "u_dot_grad_f", [dot], u.grid)
    return report


def elliptic_identity_residual(u: SymmetricVectorField, f) -> DiagnosticReport:
    """Norm of  Lap u + grad f x u + f^2 u  (zero for Beltrami fields)."""
    u, fv = _prepare(u, f)
    g = u.grid
    _check_size(g)
    inner = g.interior
    comps = u.arrays()
    gf = [a[inner] for a in _factor_gradient(u, fv)]
    uin = [a[inner] for a in comps]
    lap = [laplacian_interior(a, g.spacing) for a in comps]
    if u.symmetry == "rotational":
        r = g.mesh()[0]
        hr = g.spacing[0]
        rin = r[inner]
        for k in range(3):
            dr = (comps[k][2:, 1:-1] - comps[k][:-2, 1:-1]) / (2 * hr)
            lap[k] = lap[k] + dr / rin
        lap[0] = lap[0] - uin[0] / rin**2
        lap[1] = lap[1] - uin[1] / rin**2
    cross = [
        gf[1] * uin[2] - gf[2] * uin[1],
        gf[2] * uin[0] - gf[0] * uin[2],
        gf[0] * uin[1] - gf[1] * uin[0],
    ]
    f2 = fv[inner] ** 2
    res = [lp + cr + f2 * ui for lp, cr, ui in zip(lap, cross, uin)]
    report = DiagnosticReport(metadata={"symmetry": u.symmetry, "grid": g.header()})
    # residual lives on the interior already; pad so that _norms strips nothing extra
    padded = [np.pad(r_, 1) for r_ in res]
    _norms(report, "laplacian_identity", padded, g)
    return report
