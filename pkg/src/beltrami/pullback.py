"""Pullback of u to a level-surface chart and the constrained evolution of v = (beta_1, beta_2).

On a chart Phi(xi1, xi2, t) with f(Phi) = c + t and orthogonal tangents the
pullback obeys

    d_t v = A v,   A = (c + t) chi [[0, nu], [-1/nu, 0]],
    d_2 v^1 - d_1 v^2 = 0,
    div(B v) = 0,  B = diag(p, q),  p = chi / nu,  q = chi nu.

The evolution is also available in the generic-metric form
A = (c + t) chi |G|^{1/2} [[g^12, g^22], [-g^11, -g^21]], which must agree
with the case form on orthogonal charts.  Arrays are laid out as (t, xi2, xi1).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NumericalFailure
from .fieldio import format_rows
from .fields import DiagnosticReport, SymmetricVectorField
from .levelset import Case, SurfaceChart

TWO_PI = 2 * np.pi


@dataclass(frozen=True, eq=False)
class PullbackForm:
    beta1: np.ndarray
    beta2: np.ndarray
    chart: SurfaceChart
    xi2: np.ndarray | None = None
    xi2_closed: bool = True
    tangency_defect: float = 0.0
    constraint: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        b1, b2 = np.asarray(self.beta1, dtype=float), np.asarray(self.beta2, dtype=float)
        if b1.shape != b2.shape or b1.ndim != 3:
            raise ValueError("beta arrays must share a (t, xi2, xi1) shape")
        if b1.shape[0] != self.chart.t.size or b1.shape[2] != self.chart.xi1.size:
            raise ValueError("beta arrays do not match the chart")
        if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
            raise ValueError("pullback values must be finite")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)

    @property
    def collapsed(self) -> bool:
        return self.xi2 is None

    @property
    def h2(self) -> float:
        return float("nan") if self.xi2 is None or self.xi2.size < 2 else float(self.xi2[1] - self.xi2[0])

    def slice_t(self, k: int) -> "PullbackForm":
        sl = slice(k, k + 1)
        cons = None if self.constraint is None else self.constraint[sl]
        return replace(self, beta1=self.beta1[sl], beta2=self.beta2[sl], chart=self.chart.slice_t(k), constraint=cons)


# -- embedding --------------------------------------------------------------------


def embed(chart: SurfaceChart, xi2=None):
    """Cartesian Phi, d1 Phi, d2 Phi, dt Phi with shape (t, xi2, xi1, 3)."""
    ph, d1, dt = chart.phi, chart.d1, chart.dt
    if chart.case is Case.CONOID:
        r = chart.xi2[None, :, None]
        th, z = ph[..., 0], ph[..., 1]
        c, s = np.cos(th), np.sin(th)
        pos = np.stack([r * c, r * s, z], axis=-1)
        t1 = np.stack([-r * s * d1[..., 0], r * c * d1[..., 0], d1[..., 1]], axis=-1)
        t2 = np.stack([c, s, np.zeros_like(c)], axis=-1)
        tt = np.stack([-r * s * dt[..., 0], r * c * dt[..., 0], dt[..., 1]], axis=-1)
        return pos, t1, t2, tt
    w = np.zeros(1) if xi2 is None else np.asarray(xi2, dtype=float)
    w = w[None, :, None]
    shape = (ph.shape[0], w.shape[1], ph.shape[2])
    a, b = (np.broadcast_to(ph[..., k], shape) for k in range(2))
    a1, b1 = (np.broadcast_to(d1[..., k], shape) for k in range(2))
    at, bt = (np.broadcast_to(dt[..., k], shape) for k in range(2))
    zero, one = np.zeros(shape), np.ones(shape)
    if chart.case is Case.CYL:
        pos = np.stack([a, b, np.broadcast_to(w, shape)], axis=-1)
        return pos, np.stack([a1, b1, zero], -1), np.stack([zero, zero, one], -1), np.stack([at, bt, zero], -1)
    c, s = np.cos(w) * one, np.sin(w) * one
    pos = np.stack([a * c, a * s, b], axis=-1)
    t1 = np.stack([a1 * c, a1 * s, b1], axis=-1)
    t2 = np.stack([-a * s, a * c, zero], axis=-1)
    tt = np.stack([at * c, at * s, bt], axis=-1)
    return pos, t1, t2, tt


def _collapsible(u: SymmetricVectorField, case: Case) -> bool:
    return (case is Case.REV and u.symmetry == "rotational") or (case is Case.CYL and u.symmetry == "translational")


def pullback_form(u: SymmetricVectorField, chart: SurfaceChart, xi2=None, tol: float = 5e-2,
                  order: int = 3) -> PullbackForm:
    """beta_i = u(Phi) . d_i Phi on the chart.

    The xi2 direction is collapsed to one slice when u carries the symmetry
    of the chart (rotational on ``rev``, translational on ``cyl``); otherwise
    ``xi2`` samples are used (angles for ``rev``, heights for ``cyl``; the
    conoid chart brings its own radii).  Raises ValueError when the
    relative normal component max|u . d_t Phi| / max(|u| |d_t Phi|) exceeds ``tol``.
    u is interpolated with splines of the given ``order``.
    """
    xi2_closed = True
    if chart.case is Case.CONOID:
        xi2 = chart.xi2
        xi2_closed = False
    elif xi2 is None and not _collapsible(u, chart.case):
        if chart.case is Case.REV:
            xi2 = TWO_PI * np.arange(32) / 32
        else:
            raise ValueError("a cyl chart for a field without translational symmetry needs xi2 heights")
    elif xi2 is not None:
        xi2 = np.asarray(xi2, dtype=float)
        xi2_closed = chart.case is Case.REV
    pos, t1, t2, tt = embed(chart, xi2)
    uu = u.evaluate(pos, order)
    beta1 = np.einsum("...k,...k->...", uu, t1)
    beta2 = np.einsum("...k,...k->...", uu, t2)
    normal = np.abs(np.einsum("...k,...k->...", uu, tt))
    scale = np.linalg.norm(uu, axis=-1) * np.linalg.norm(tt, axis=-1)
    defect = float(normal.max() / scale.max()) if scale.max() > 0 else 0.0
    if defect > tol:
        raise ValueError(f"u is not tangent to the level sets: relative normal component {defect:.3g} > {tol:g}")
    return PullbackForm(beta1, beta2, chart, None if chart.case is not Case.CONOID and xi2 is None else xi2,
                        xi2_closed, defect, metadata={"symmetry": u.symmetry})


# -- discrete operators on the (xi2, xi1) grid ---------------------------------------


def _d1(a, h, closed):
    if closed:
        return (np.roll(a, -1, axis=-1) - np.roll(a, 1, axis=-1)) / (2 * h)
    return np.gradient(a, h, axis=-1, edge_order=2)


def _d2(a, h, closed):
    if a.shape[-2] == 1:
        return np.zeros_like(a)
    if closed:
        return (np.roll(a, -1, axis=-2) - np.roll(a, 1, axis=-2)) / (2 * h)
    return np.gradient(a, h, axis=-2, edge_order=2)


def curl_perp(v1, v2, h1, h2, closed1=True, closed2=True):
    """d_2 v^1 - d_1 v^2."""
    return _d2(v1, h2, closed2) - _d1(v2, h1, closed1)


def divergence(w1, w2, h1, h2, closed1=True, closed2=True):
    return _d1(w1, h1, closed1) + _d2(w2, h2, closed2)


# -- constrained evolution ---------------------------------------------------------


def _coefficients(chart: SurfaceChart, path: str):
    """(a12, a21) with A = [[a11, a12], [a21, a22]] sampled on the chart times."""
    if chart.chi is None:
        raise ValueError("chart coefficients missing; call chart_coefficients first")
    ct = (chart.level + chart.t)[:, None, None]
    if path == "case":
        zero = np.zeros_like(chart.chi)
        return zero, ct * chart.chi * chart.nu, -ct * chart.chi / chart.nu, zero
    if path == "metric":
        g11, g12, g22 = chart.metric()
        det = g11 * g22 - g12 * g12
        inv11, inv12, inv22 = g22 / det, -g12 / det, g11 / det
        k = ct * chart.chi * np.sqrt(det)
        return k * inv12, k * inv22, -k * inv11, -k * inv12
    raise ValueError(f"unknown path {path!r}")


def evolve_constrained(v0: PullbackForm, chart: SurfaceChart | None = None, path: str = "case",
                       tol: float | None = 0.1) -> PullbackForm:
    """RK4 in t of v_t = A(xi, t) v from the t = 0 slice of ``v0``.

    Coefficients between chart times come from cubic splines in t.  The
    returned form carries the constraint history max |d_2 v^1 - d_1 v^2| per t.
    ``tol`` bounds the initial relative constraint defect (None skips the check).
    """
    chart = chart or v0.chart
    a11, a12, a21, a22 = _coefficients(chart, path)
    t = chart.t
    if a11.shape[1] != v0.beta1.shape[1] and a11.shape[1] != 1:
        raise ValueError("chart and form disagree on xi2 slices")
    splines = [CubicSpline(t, a, axis=0) if t.size > 2 else None for a in (a11, a12, a21, a22)]

    def coeff(k, tau):
        if splines[0] is None:
            return a11[k], a12[k], a21[k], a22[k]
        return tuple(s(tau) for s in splines)

    def rhs(v1, v2, c):
        return c[0] * v1 + c[1] * v2, c[2] * v1 + c[3] * v2

    v1 = np.array(v0.beta1[0])
    v2 = np.array(v0.beta2[0])
    h1 = chart.h1
    h2 = v0.h2
    closed = chart.closed
    out1 = np.empty((t.size,) + np.broadcast(v1, a11[0]).shape)
    out2 = np.empty_like(out1)
    cons = np.empty(t.size)
    v1 = np.broadcast_to(v1, out1.shape[1:]).copy()
    v2 = np.broadcast_to(v2, out1.shape[1:]).copy()
    scale = max(np.abs(v1).max(), np.abs(v2).max(), 1e-300)
    initial = np.abs(curl_perp(v1, v2, h1, h2, closed, v0.xi2_closed)).max()
    if tol is not None and initial > tol * scale:
        raise ValueError(f"initial constraint defect {initial:.3g} exceeds tolerance")
    for k in range(t.size):
        out1[k], out2[k] = v1, v2
        cons[k] = np.abs(curl_perp(v1, v2, h1, h2, closed, v0.xi2_closed)).max()
        if k == t.size - 1:
            break
        dt = t[k + 1] - t[k]
        c0, ch, c1 = coeff(k, t[k]), coeff(None, t[k] + 0.5 * dt), coeff(k + 1, t[k + 1])
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = rhs(v1, v2, c0)
            k2 = rhs(v1 + 0.5 * dt * k1[0], v2 + 0.5 * dt * k1[1], ch)
            k3 = rhs(v1 + 0.5 * dt * k2[0], v2 + 0.5 * dt * k2[1], ch)
            k4 = rhs(v1 + dt * k3[0], v2 + dt * k3[1], c1)
            v1 = v1 + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v2 = v2 + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
            raise NumericalFailure(f"constrained evolution blew up at t = {t[k + 1]:g}")
    meta = dict(v0.metadata, path=path, initial_constraint=float(initial))
    return PullbackForm(out1, out2, chart, v0.xi2, v0.xi2_closed, v0.tangency_defect, cons, meta)


def system_residuals(form: PullbackForm) -> DiagnosticReport:
    """All four equations of the surface system, d_t by second-order differences in t.

    closedness   d_1 beta_2 - d_2 beta_1
    evolution_1  d_t beta_1 - (c + t) chi nu beta_2
    evolution_2  d_t beta_2 + (c + t) chi / nu beta_1
    divergence   div(B beta)
    Norms are maxima over the whole (t, xi2, xi1) array.
    """
    chart = form.chart
    b1, b2 = form.beta1, form.beta2
    h1, h2 = chart.h1, form.h2
    _, a12, a21, _ = _coefficients(chart, "case")
    report = DiagnosticReport(metadata={"case": chart.case.value, "level": chart.level, "steps": int(chart.t.size - 1)})
    rows = {"closedness": -curl_perp(b1, b2, h1, h2, chart.closed, form.xi2_closed)}
    if chart.t.size > 2:
        d_t1 = np.gradient(b1, chart.t, axis=0, edge_order=2)
        d_t2 = np.gradient(b2, chart.t, axis=0, edge_order=2)
        rows["evolution_1"] = d_t1 - a12 * b2
        rows["evolution_2"] = d_t2 - a21 * b1
    rows["divergence"] = divergence(chart.p * b1, chart.q * b2, h1, h2, chart.closed, form.xi2_closed)
    for name, arr in rows.items():
        report.add(name, np.abs(arr).max(), np.sqrt(np.mean(arr**2)), h1)
    return report


# -- elliptic residuals and energy ----------------------------------------------------


def _check_periodic(a, closed, name):
    """Reject data whose wrap-around jump dwarfs the interior jumps in a closed direction."""
    if not closed or a.shape[-1] < 3:
        return
    interior = np.abs(np.diff(a, axis=-1)).max()
    wrap = np.abs(a[..., 0] - a[..., -1]).max()
    if wrap > 10 * max(interior, 1e-14):
        raise ValueError(f"{name} is not periodic in the closed xi1 direction (jump {wrap:.3g})")


def elliptic_residuals(v: PullbackForm, k: int = 0) -> DiagnosticReport:
    """div(B v), d_2 v^1 - d_1 v^2 and div(B grad v^2) on the (xi2, xi1) grid at time index k."""
    chart = v.chart
    if chart.chi is None:
        raise ValueError("chart coefficients missing; call chart_coefficients first")
    v1, v2 = v.beta1[k], v.beta2[k]
    p, q = chart.p[k], chart.q[k]
    h1, h2 = chart.h1, v.h2
    c1, c2 = chart.closed, v.xi2_closed
    _check_periodic(v1, c1, "v^1")
    _check_periodic(v2, c1, "v^2")
    cell = h1 * (h2 if v1.shape[0] > 1 else TWO_PI)
    report = DiagnosticReport(metadata={"case": chart.case.value, "t": float(chart.t[k])})
    for name, arr in (
        ("div_Bv", divergence(p * v1, q * v2, h1, h2, c1, c2)),
        ("curl_perp", curl_perp(v1, v2, h1, h2, c1, c2)),
    ):
        report.add(name, np.abs(arr).max(), np.sqrt((arr**2).sum() * cell), h1)
    if chart.case is Case.CONOID:
        report.metadata["div_B_grad_v2"] = "not defined: B depends on xi2 for the conoid chart"
        return report
    arr = divergence(p * _d1(v2, h1, c1), q * _d2(v2, h2, c2), h1, h2, c1, c2)
    report.add("div_B_grad_v2", np.abs(arr).max(), np.sqrt((arr**2).sum() * cell), h1)
    return report


def div_b_grad(v2, p, q, h1, h2):
    """Periodic div(B grad v^2) with centered differences (both directions closed)."""
    return divergence(p * _d1(v2, h1, True), q * _d2(v2, h2, True), h1, h2, True, True)


def dirichlet_energy(v2, p, q, h1: float, h2: float | None = None, closed=(True, True),
                     xi2_period: float = TWO_PI) -> float:
    """Integral of p (d_1 v^2)^2 + q (d_2 v^2)^2 over the closed (xi1, xi2) torus.

    ``v2``, ``p`` and ``q`` are (xi2, xi1) arrays; a single xi2 row means the
    data do not depend on xi2, whose period ``xi2_period`` then weights the sum.
    """
    if not all(closed):
        raise ValueError("the Dirichlet energy needs a closed chart in both directions")
    v2 = np.atleast_2d(np.asarray(v2, dtype=float))
    p = np.broadcast_to(p, v2.shape)
    q = np.broadcast_to(q, v2.shape)
    g1 = _d1(v2, h1, True)
    if v2.shape[0] == 1:
        return float((p * g1 * g1).sum() * h1 * xi2_period)
    g2 = _d2(v2, h2, True)
    return float((p * g1 * g1 + q * g2 * g2).sum() * h1 * h2)


def write_form(path, form: PullbackForm) -> Path:
    """CSV dump (xi1, xi2, t, beta1, beta2)."""
    path = Path(path)
    T, M, N = form.beta1.shape
    tt, mm, nn = np.meshgrid(form.chart.t, np.arange(M), form.chart.xi1, indexing="ij")
    x2 = np.zeros_like(tt) if form.xi2 is None else np.asarray(form.xi2)[mm]
    with open(path, "w", newline="") as fh:
        fh.write("xi1,xi2,t,beta1,beta2\n")
        fh.write(format_rows([nn, x2, tt, form.beta1, form.beta2]))
    return path


def write_history(path, form: PullbackForm, residuals: list[DiagnosticReport] | None = None) -> Path:
    """CSV (t, constraint, div_Bv, div_BgradV2) for an evolved form."""
    path = Path(path)
    t = form.chart.t
    cons = form.constraint if form.constraint is not None else np.full(t.size, np.nan)
    div_bv = np.full(t.size, np.nan)
    div_bg = np.full(t.size, np.nan)
    for k, rep in enumerate(residuals or []):
        div_bv[k] = rep["div_Bv"].norm_inf
        if "div_B_grad_v2" in rep:
            div_bg[k] = rep["div_B_grad_v2"].norm_inf
    with open(path, "w", newline="") as fh:
        fh.write("t,constraint,div_Bv,div_BgradV2\n")
        fh.write(format_rows([t, cons, div_bv, div_bg]))
    return path
