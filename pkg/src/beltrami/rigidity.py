"""Rigidity diagnostics.

* constancy of the pullback on symmetric charts (beta_2 depends on t only,
  beta_1 does not depend on xi2),
* reconstruction of u from (beta_1, beta_2) on orthogonal charts,
* numerical nullspaces of the linear constraint systems satisfied by the
  pullback at a fixed t for factors f(r) and f(theta),
* defect fields w = u - (shifted or rotated u) on 3D samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy import ndimage

from .fieldio import format_rows
from .fields import ChartTag, DiagnosticReport, SymmetricVectorField
from .levelset import EPS, Case, SurfaceChart
from .pullback import PullbackForm, embed

# singular values below THRESHOLD_C * h^2 count as zero (see curl_sanity)
THRESHOLD_C = 1.0


# -- constancy on symmetric charts ------------------------------------------------


def _normalized(spread, values):
    scale = np.abs(values).max()
    return spread / scale if scale > 0 else 0.0 * spread


def prop31_diagnostic(beta: PullbackForm) -> DiagnosticReport:
    """Per-t variation of beta_2 over (xi1, xi2) and of beta_1 over xi2.

    Entries hold the largest value over t; per-t raw and normalized
    (divided by max |beta_i| at that t) ranges and standard deviations go
    in the metadata.
    """
    case = beta.chart.case
    if case not in (Case.CYL, Case.REV):
        raise ValueError("the constancy diagnostic needs a cyl or rev chart")
    b1, b2 = beta.beta1, beta.beta2
    per_t = {"t": beta.chart.t.tolist()}
    rng2 = b2.max(axis=(1, 2)) - b2.min(axis=(1, 2))
    std2 = b2.std(axis=(1, 2))
    rng1 = (b1.max(axis=1) - b1.min(axis=1)).max(axis=-1)
    std1 = b1.std(axis=1).max(axis=-1)
    norm2 = np.array([_normalized(r, b2[k]) for k, r in enumerate(rng2)])
    nstd2 = np.array([_normalized(s, b2[k]) for k, s in enumerate(std2)])
    norm1 = np.array([_normalized(r, b1[k]) for k, r in enumerate(rng1)])
    nstd1 = np.array([_normalized(s, b1[k]) for k, s in enumerate(std1)])
    per_t.update(beta2_range=rng2, beta2_std=std2, beta2_range_normalized=norm2, beta2_std_normalized=nstd2,
                 beta1_xi2_range=rng1, beta1_xi2_std=std1, beta1_xi2_range_normalized=norm1,
                 beta1_xi2_std_normalized=nstd1)
    report = DiagnosticReport(metadata={"case": case.value, "xi2_slices": int(b1.shape[1]), "per_t": per_t})
    h = beta.chart.h1
    report.add("beta2_variation", norm2.max(), nstd2.max(), h)
    report.add("beta1_xi2_variation", norm1.max(), nstd1.max(), h)
    return report


# -- reconstruction -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChartSamples:
    """Cartesian vectors ``values`` at Cartesian ``points``, both (t, xi2, xi1, 3)."""

    points: np.ndarray
    values: np.ndarray
    normals: np.ndarray

    def tangential(self, u: np.ndarray) -> np.ndarray:
        """Remove the component of u along the level-set normal."""
        return u - np.einsum("...k,...k->...", u, self.normals)[..., None] * self.normals


def reconstruct_from_beta(beta: PullbackForm, chart: SurfaceChart | None = None,
                          eps: float = EPS) -> ChartSamples:
    """u(Phi) = beta_1 d1 Phi / |d1 Phi|^2 + beta_2 d2 Phi / |d2 Phi|^2 on an orthogonal chart."""
    chart = chart or beta.chart
    if chart.case not in (Case.CYL, Case.REV):
        raise ValueError("reconstruction needs an orthogonal (cyl or rev) chart")
    pos, t1, t2, tt = embed(chart, beta.xi2)
    n1 = np.einsum("...k,...k->...", t1, t1)
    n2 = np.einsum("...k,...k->...", t2, t2)
    if np.sqrt(n1.min()) < eps:
        raise ValueError(f"|d1 Phi| fell below {eps:g}")
    u = beta.beta1[..., None] * t1 / n1[..., None] + beta.beta2[..., None] * t2 / n2[..., None]
    normals = tt / np.linalg.norm(tt, axis=-1, keepdims=True)
    return ChartSamples(pos, u, normals)


def roundtrip_error(u: SymmetricVectorField, beta: PullbackForm, order: int = 3) -> DiagnosticReport:
    """Compare the reconstruction with the tangential part of u at the chart points."""
    rec = reconstruct_from_beta(beta)
    ref = rec.tangential(u.evaluate(rec.points, order))
    err = np.linalg.norm(rec.values - ref, axis=-1)
    scale = np.linalg.norm(ref, axis=-1).max()
    report = DiagnosticReport(metadata={"scale": float(scale), "case": beta.chart.case.value})
    report.add("roundtrip", err.max(), np.sqrt(np.mean(err**2)), beta.chart.h1)
    report.add("roundtrip_relative", err.max() / scale if scale > 0 else 0.0,
               np.sqrt(np.mean(err**2)) / scale if scale > 0 else 0.0, beta.chart.h1)
    return report


# -- constraint systems at fixed t ---------------------------------------------------


class StaggeredGrid:
    """Periodic n1 x n2 cells; v^1 on xi1-faces (i+1/2, j), v^2 on xi2-faces (i, j+1/2).

    Weighted divergences live at cell centers and weighted curls at corners,
    so the discrete kernel of (div, curl) is exactly the constant fields.
    """

    def __init__(self, n1: int, n2: int, length1: float, length2: float, lo2: float = 0.0):
        if n1 < 3 or n2 < 3:
            raise ValueError("need at least 3 cells per direction")
        self.n1, self.n2 = int(n1), int(n2)
        self.h1, self.h2 = length1 / n1, length2 / n2
        self.xi2_center = lo2 + self.h2 * np.arange(n2)
        self.xi2_face = self.xi2_center + 0.5 * self.h2

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    def _shift(self, n, k):
        return sp.diags([np.ones(n)], [0], shape=(n, n), format="csr")[np.roll(np.arange(n), -k)]

    def _forward(self, n, h):
        """(a_{i+1} - a_i) / h with periodic wrap."""
        return (self._shift(n, 1) - sp.identity(n, format="csr")) / h

    def _backward(self, n, h):
        return (sp.identity(n, format="csr") - self._shift(n, -1)) / h

    def divergence(self, w1=None, w2=None) -> sp.csr_matrix:
        """div(w v) at cell centers; w1 at xi1-faces, w2 at xi2-faces (functions of xi2 only)."""
        i1 = sp.identity(self.n1)
        w1 = np.ones(self.n2) if w1 is None else w1
        w2 = np.ones(self.n2) if w2 is None else w2
        d1 = sp.kron(sp.diags(w1), self._backward(self.n1, self.h1))
        d2 = sp.kron(self._backward(self.n2, self.h2) @ sp.diags(w2), i1)
        return sp.hstack([d1, d2]).tocsr()

    def curl(self, w1=None, w2=None) -> sp.csr_matrix:
        """d_2 (w v^1) - d_1 (w v^2) at corners."""
        i1 = sp.identity(self.n1)
        w1 = np.ones(self.n2) if w1 is None else w1
        w2 = np.ones(self.n2) if w2 is None else w2
        c1 = sp.kron(self._forward(self.n2, self.h2) @ sp.diags(w1), i1)
        c2 = -sp.kron(sp.diags(w2), self._forward(self.n1, self.h1))
        return sp.hstack([c1, c2]).tocsr()

    def constants(self) -> np.ndarray:
        """Orthonormal basis of the constant fields (1, 0) and (0, 1), shape (2 n1 n2, 2)."""
        n = self.size
        e = np.zeros((2 * n, 2))
        e[:n, 0] = e[n:, 1] = 1.0 / np.sqrt(n)
        return e


@dataclass
class RankReport:
    case: str
    shape: tuple
    singular_values: np.ndarray
    threshold: float
    nullity: int
    constant_overlap: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "shape": list(self.shape),
            "threshold": self.threshold,
            "nullity": self.nullity,
            "constant_overlap": self.constant_overlap,
            "smallest_singular_values": self.singular_values[-6:][::-1].tolist(),
            "metadata": self.metadata,
        }


RADIAL_FACTORS = {
    # f'(r), f''(r)
    "r": (lambda r: 1.0, lambda r: 0.0),
    "log r": (lambda r: 1.0 / r, lambda r: -1.0 / r**2),
    "r^2": (lambda r: 2.0 * r, lambda r: 2.0),
}


def radial_chart_coefficients(factor="r", r0: float = 1.5):
    """(p, q, p_t, q_t) of the cylinder chart theta = xi1, z = xi2, r = r(t) at radius r0."""
    df, d2f = RADIAL_FACTORS[factor] if isinstance(factor, str) else factor
    a, b = float(df(r0)), float(d2f(r0))
    if abs(a) < EPS:
        raise ValueError("f'(r0) vanishes: the cylinder level is not regular")
    rt = 1.0 / a
    rtt = -b / a**3
    p, q = rt / r0, r0 * rt
    pt = (rtt * r0 - rt * rt) / r0**2
    qt = rt * rt + r0 * rtt
    return p, q, pt, qt


def _operator(case: str, n1: int, n2: int, factor, r0: float, include_second: bool):
    if case == "f(r)":
        g = StaggeredGrid(n1, n2, 2 * np.pi, 2 * np.pi)
        p, q, pt, qt = radial_chart_coefficients(factor, r0)
        one = np.ones(n2)
        blocks = [g.divergence(p * one, q * one), g.divergence(pt * one, qt * one), g.curl()]
        meta = {"p": p, "q": q, "p_t": pt, "q_t": qt, "factor": factor if isinstance(factor, str) else "custom",
                "r0": r0, "constraints": ["div(B v)", "div(B_t v)", "curl v"]}
    elif case == "f(theta)":
        # xi1 = z over one period, xi2 = r in [r0, r0 + 1)
        g = StaggeredGrid(n1, n2, 1.0, 1.0, lo2=r0)
        rc, rf = g.xi2_center, g.xi2_face
        blocks = [g.divergence(rc, rf), g.curl(rc**2, rf**2), g.curl()]
        names = ["div(xi2 v)", "div(xi2^2 v_perp)", "curl v"]
        if include_second:
            blocks.append(g.divergence(rc**3, rf**3))
            names.append("div(xi2^3 v)")
        meta = {"r0": r0, "constraints": names}
    elif case == "curl":
        g = StaggeredGrid(n1, n2, 2 * np.pi, 2 * np.pi)
        blocks = [g.curl()]
        meta = {"constraints": ["curl v"], "exact_nullity": n1 * n2 + 1}
    else:
        raise ValueError(f"unknown case {case!r}; expected 'f(r)', 'f(theta)' or 'curl'")
    return g, sp.vstack(blocks).tocsr(), meta


def compatibility_rank(case: str, grid, factor="r", r0: float = 1.5, include_second: bool = True,
                       threshold_c: float = THRESHOLD_C):
    """Numerical nullspace of the fixed-t constraint system on a periodic grid.

    ``case`` is 'f(r)', 'f(theta)' (also 'f(θ)') or 'curl' (sanity operator).
    ``grid`` is n or (n1, n2) cells.  f(r) uses div(B v) = 0, its t-derivative
    div(B_t v) = 0 (the B v_t part is a multiple of curl v) and curl v = 0.
    f(theta) uses div(xi2 v), div(xi2^2 v_perp) = curl(xi2^2 v) and curl v; the
    constant-in-xi1 field (0, C / xi2) satisfies these three, so by default the
    next t-derivative div(xi2^3 v) = 0 is appended.

    Returns ``(nullity, RankReport)``.  Singular values below
    ``threshold_c * h^2`` count as zero.
    """
    case = "f(theta)" if case in ("f(θ)", "f(theta)") else case
    n1, n2 = (grid, grid) if np.isscalar(grid) else tuple(grid)
    g, a, meta = _operator(case, int(n1), int(n2), factor, r0, include_second)
    try:
        _, s, vt = scipy.linalg.svd(a.toarray(), full_matrices=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RuntimeError(f"SVD failed: {exc}") from exc
    h = max(g.h1, g.h2)
    threshold = threshold_c * h * h
    # rows < columns cannot happen here, but guard the count anyway
    s_full = np.concatenate([s, np.zeros(max(0, a.shape[1] - s.size))])
    nullity = int(np.sum(s_full < threshold))
    null = vt[s < threshold].T
    if null.size:
        e = g.constants()
        overlap = float(np.linalg.norm(e.T @ null) ** 2 / null.shape[1])
    else:
        overlap = 0.0
    meta.update(h1=g.h1, h2=g.h2, rows=int(a.shape[0]), columns=int(a.shape[1]))
    return nullity, RankReport(case, (g.n1, g.n2), s_full, threshold, nullity, overlap, meta)


def curl_sanity(n: int, threshold_c: float = THRESHOLD_C) -> dict:
    """Check the threshold on the curl operator, whose exact nullity is n^2 + 1."""
    nullity, rep = compatibility_rank("curl", n, threshold_c=threshold_c)
    s = rep.singular_values
    exact = n * n + 1
    return {
        "nullity": nullity,
        "exact": exact,
        "largest_zero": float(s[-exact]),
        "smallest_nonzero": float(s[-exact - 1]),
        "threshold": rep.threshold,
    }


def write_spectrum(path, rep: RankReport) -> Path:
    """CSV (index, singular_value, below_threshold), largest first."""
    path = Path(path)
    s = rep.singular_values
    with open(path, "w", newline="") as fh:
        fh.write("index,singular_value,below_threshold\n")
        fh.write(format_rows([np.arange(s.size), s, (s < rep.threshold).astype(float)]))
    return path


# -- symmetry defect fields --------------------------------------------------------------


@dataclass
class SymmetryDefect:
    """w = u - (transformed u) on the nodes whose image stays inside the grid."""

    kind: str
    tau: float
    w: np.ndarray
    mask: np.ndarray
    norm_inf: float
    norm_l2: float
    relative_inf: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tau": self.tau, "nodes": int(self.mask.sum()), "norm_inf": self.norm_inf,
                "norm_l2": self.norm_l2, "relative_inf": self.relative_inf}


def _snap(idx, tol=1e-9):
    near = np.rint(idx)
    return np.where(np.abs(idx - near) < tol, near, idx)


def symmetry_defect(u: SymmetricVectorField, kind: str, tau: float) -> SymmetryDefect:
    """Defect of translation invariance along e_z or rotation invariance about the z axis.

    translation: w(x) = u(x) - u(x + tau e_z)
    rotation:    w(x) = u(x) - R_tau^T u(R_tau x)
    Off-node values use trilinear interpolation; index coordinates within
    1e-9 of a node are snapped so tau = 0 gives w = 0 exactly.
    """
    if u.symmetry != "none" or u.grid.chart is not ChartTag.FULL_3D:
        raise ValueError("symmetry_defect needs 3D samples (symmetry 'none')")
    grid = u.grid
    pts = np.stack(grid.mesh(), axis=-1)
    c, s = np.cos(tau), np.sin(tau)
    if kind == "translation":
        img = pts + np.array([0.0, 0.0, tau])
    elif kind == "rotation":
        img = np.stack([c * pts[..., 0] - s * pts[..., 1], s * pts[..., 0] + c * pts[..., 1], pts[..., 2]], axis=-1)
    else:
        raise ValueError(f"unknown kind {kind!r}; expected 'translation' or 'rotation'")
    idx = _snap(grid.to_index(img))
    upper = np.asarray(grid.shape) - 1
    mask = np.all((idx >= -1e-12) & (idx <= upper + 1e-12), axis=-1)
    if not mask.any():
        raise ValueError("the transformed grid misses the sample box entirely")
    coords = np.clip(idx[mask], 0, upper).T
    vals = [ndimage.map_coordinates(a, coords, order=1, mode="nearest") for a in u.arrays()]
    moved = np.stack(vals, axis=-1)
    if kind == "rotation":
        # R^T applied to u(R x)
        moved = np.stack([c * moved[:, 0] + s * moved[:, 1], -s * moved[:, 0] + c * moved[:, 1], moved[:, 2]], axis=-1)
    here = np.stack([a[mask] for a in u.arrays()], axis=-1)
    wm = here - moved
    w = np.zeros(grid.shape + (3,))
    w[mask] = wm
    mag = np.linalg.norm(wm, axis=-1)
    scale = np.linalg.norm(here, axis=-1).max()
    return SymmetryDefect(kind, float(tau), w, mask, float(mag.max()), float(np.sqrt(np.mean(mag**2))),
                          float(mag.max() / scale) if scale > 0 else 0.0)
