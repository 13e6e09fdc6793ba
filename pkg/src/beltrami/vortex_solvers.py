"""Free-boundary vortex problems in the half-plane.

vortex-ring (meridional (r, z) chart):
    -(Lap_{z,r} - r^-1 d_r) Psi = Gamma'(Psi) Gamma(Psi),  Psi -> -gamma - W r^2 / 2
vortex-pair (cartesian (x1, x2) chart, x2 >= 0):
    -Lap Psi = u3'(Psi) u3(Psi),  Psi -> -gamma - W x2

with Gamma = u3 = k max(s, 0)**l.  The unknown is split as Psi = background + psi
with psi = 0 on every edge of the truncated rectangle; the background is
annihilated by both discrete operators, so the trivial branch is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq
from skimage.measure import find_contours

from .errors import NumericalFailure
from .fields import ChartTag, Grid, ScalarChartField, interpolate_stack
from .generators import reconstruct_rotational, reconstruct_translational
from .gs_solvers import LinearSolver, SemilinearProblem, SolveReport, SolverOptions, solve_semilinear
from .profiles import Profile

KINDS = {"vortex-ring": "grad-shafranov-rz", "vortex-pair": "laplacian-xy"}


class TruncationError(NumericalFailure):
    """The vortex core reached the outer edge of the truncated domain."""


@dataclass(frozen=True)
class CoreSeed:
    """Gaussian bump ``amplitude * exp(-|x - center|^2 / radius^2)`` added to the background."""

    center: tuple
    radius: float
    amplitude: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("seed radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True, eq=False)
class FreeBoundaryProblem:
    kind: str
    W: float
    gamma: float
    l: float
    grid: Grid
    strength: float = 1.0
    seed: object = "trivial"
    options: SolverOptions = field(default_factory=lambda: SolverOptions(method="newton", tol=1e-9))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown vortex kind {self.kind!r}")
        if not self.W > 0:
            raise ValueError("speed W must be positive")
        if self.gamma < 0:
            raise ValueError("flux gamma must be non-negative")
        if self.l < 1:
            raise ValueError("exponent l must be >= 1")
        want = ChartTag.MERIDIONAL_RZ if self.kind == "vortex-ring" else ChartTag.CARTESIAN_XY
        if self.grid.chart is not want:
            raise ValueError(f"{self.kind} needs a {want.value} grid")
        if self.kind == "vortex-pair" and abs(self.grid.origin[1]) > 1e-12:
            raise ValueError("vortex-pair grids start on the symmetry line x2 = 0")
        if not (self.seed == "trivial" or isinstance(self.seed, CoreSeed)):
            raise ValueError("seed must be 'trivial' or a CoreSeed")

    @property
    def profile(self) -> Profile:
        return Profile.power(self.l, self.strength, name="Gamma" if self.kind == "vortex-ring" else "u3")

    def background(self) -> np.ndarray:
        a1, a2 = self.grid.mesh()
        if self.kind == "vortex-ring":
            return -self.gamma - 0.5 * self.W * a1 * a1
        return -self.gamma - self.W * a2

    def initial(self) -> np.ndarray:
        bg = self.background()
        if self.seed == "trivial":
            return bg
        a1, a2 = self.grid.mesh()
        c1, c2 = self.seed.center
        bump = self.seed.amplitude * np.exp(-((a1 - c1) ** 2 + (a2 - c2) ** 2) / self.seed.radius**2)
        bump[0, :] = bump[-1, :] = bump[:, 0] = bump[:, -1] = 0.0
        return bg + bump


@dataclass
class VortexReport:
    solve: SolveReport
    trivial: bool
    core_area: float
    core_components: int
    far_field_defect: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "solve": self.solve.to_dict(),
            "trivial": self.trivial,
            "core_area": self.core_area,
            "core_components": self.core_components,
            "far_field_defect": self.far_field_defect,
            "metadata": self.metadata,
        }


def _outer_band(kind, mask, margin):
    """Mask values within ``margin`` (fraction of the node count) of the truncation edges.

    The edges themselves carry the background value, so the core can only
    show up in the band next to them.  The symmetry edge is excluded.
    """
    k1 = max(2, int(np.ceil(margin * mask.shape[0])))
    k2 = max(2, int(np.ceil(margin * mask.shape[1])))
    if kind == "vortex-ring":
        return np.concatenate([mask[-k1:, :].ravel(), mask[:, :k2].ravel(), mask[:, -k2:].ravel()])
    return np.concatenate([mask[:k1, :].ravel(), mask[-k1:, :].ravel(), mask[:, -k2:].ravel()])


def core_area(psi: ScalarChartField) -> float:
    """Area of {Psi > 0}: polygon area of the zero contour, closed by padding.

    On the meridional chart the first node sits half a cell off the axis, so
    the section is mirrored across r = 0 and the mirrored area halved; a core
    touching the axis then keeps its strip next to it.
    """
    v = psi.values
    if not np.any(v > 0):
        return 0.0
    halve = psi.chart is ChartTag.MERIDIONAL_RZ
    if halve:
        v = np.concatenate([v[::-1], v], axis=0)
    pad = np.pad(v, 1, constant_values=min(float(v.min()), -1.0))
    total = 0.0
    for c in find_contours(pad, 0.0, positive_orientation="high"):
        x = (c[:, 0] - 1) * psi.spacing[0]
        y = (c[:, 1] - 1) * psi.spacing[1]
        total += 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return abs(total) / 2 if halve else abs(total)


def far_field_defect(psi: ScalarChartField, p: FreeBoundaryProblem) -> float:
    """Max of |r^-1 d_r Psi + W| (ring) or |d_2 Psi + W| (pair) on the outermost grid lines."""
    v = psi.values
    h1, h2 = psi.spacing
    if p.kind == "vortex-ring":
        r = psi.grid.axes()[0][-1]
        d = (3 * v[-1, :] - 4 * v[-2, :] + v[-3, :]) / (2 * h1) / r
    else:
        d = (3 * v[:, -1] - 4 * v[:, -2] + v[:, -3]) / (2 * h2)
    return float(np.abs(d + p.W).max())


def _scaling_exponents(p):
    """Psi(x) -> Psi(s x) / s**d maps solutions with factor mu on g to mu * s**e."""
    d = 2.0 if p.kind == "vortex-ring" else 1.0
    return d, 2.0 + d * (2.0 * p.l - 2.0)


def _coarse_grid(grid: Grid, h_max: float) -> Grid:
    """Coarsen by the largest integer factor keeping nodes aligned and spacing <= h_max."""
    n1, n2 = grid.shape
    for k in (4, 3, 2):
        fits = (n2 - 1) % k == 0 and max(grid.spacing) * k <= h_max
        if grid.chart is ChartTag.MERIDIONAL_RZ:
            fits = fits and n1 % k == 0
            if fits:
                return Grid.meridional(grid.upper[0] + 0.5 * grid.spacing[0] * (1 - k), grid.origin[1],
                                       grid.upper[1], n1 // k, (n2 - 1) // k + 1)
        elif fits and (n1 - 1) % k == 0:
            return Grid.uniform(grid.chart, grid.origin, grid.upper, ((n1 - 1) // k + 1, (n2 - 1) // k + 1))
    return grid


def normalized_seed_iteration(p: FreeBoundaryProblem, tol: float = 1e-8, max_iter: int = 400):
    """Initial iterate on the vortex branch from the core seed.

    Plain Picard is repelled by the vortex branch, so the seed is first
    relaxed with the normalized iteration

        psi_{n+1} = mu_n (-L)^{-1} g(Psi_n),  mu_n chosen so max Psi_{n+1} = max Psi_0,

    on a coarsened copy of the grid (spacing at most a quarter of the seed
    radius).  The converged pair (Psi, mu) solves the problem with g scaled
    by mu; the scaling symmetry Psi(x) -> Psi(s x) / s**d removes mu exactly
    (the flux gamma is rescaled along the way).  Returns the rescaled stream
    function sampled on ``p.grid`` and the iteration count.
    """
    d, e = _scaling_exponents(p)
    work = _coarse_grid(p.grid, 0.25 * p.seed.radius)
    wp = FreeBoundaryProblem(p.kind, p.W, p.gamma, p.l, work, p.strength, p.seed, p.options)
    a1, a2 = work.mesh()
    shape_bg = -0.5 * p.W * a1 * a1 if p.kind == "vortex-ring" else -p.W * a2
    psi = wp.initial()
    target = psi.max()
    if not target > 0:
        raise ValueError("core seed does not create a positive region")
    solver = LinearSolver(KINDS[p.kind], work, SolverOptions())
    zero = np.zeros(work.shape)
    mu = 1.0
    for it in range(1, max_iter + 1):
        phi, _ = solver.solve(p.profile.g(psi[1:-1, 1:-1]), zero)
        if not phi.max() > 0:
            raise NumericalFailure("normalized seed iteration collapsed to the trivial branch")

        def excess(m):
            gamma_w = p.gamma * m ** (-d / e)
            return (shape_bg - gamma_w + m * phi).max() - target

        mu = brentq(excess, 1e-12, 1e12, xtol=1e-14, rtol=1e-13)
        new = shape_bg - p.gamma * mu ** (-d / e) + mu * phi
        change = np.abs(new - psi).max()
        psi = new
        if change < tol * max(1.0, target):
            break
    else:
        raise NumericalFailure("normalized seed iteration did not settle")
    s = mu ** (-1.0 / e)
    # Psi_target(y) = Psi_work(s y) / s**d; outside the working box only the background survives
    y1, y2 = p.grid.mesh()
    bgw = shape_bg - p.gamma * s**d
    pert = psi - bgw
    pts = np.stack([s * y1, s * y2], axis=-1)
    lo, hi = np.asarray(work.origin), np.asarray(work.upper)
    inside = np.all((pts >= lo) & (pts <= hi), axis=-1)
    clipped = np.clip(pts, lo, hi)
    vals = interpolate_stack(work, [pert], clipped)[0]
    vals = np.where(inside, vals, 0.0) / s**d
    out = p.background() + vals
    out[0, :], out[-1, :], out[:, 0], out[:, -1] = (p.background()[0, :], p.background()[-1, :],
                                                    p.background()[:, 0], p.background()[:, -1])
    return out, it


def solve_free_boundary(p: FreeBoundaryProblem, margin: float = 0.05, far_field_tol: float | None = 0.25):
    """Returns ``(Psi, core_mask, VortexReport)``.

    The trivial seed starts from the background.  A core seed is relaxed by
    :func:`normalized_seed_iteration` and then solved to tolerance with the
    configured method (Newton by default).  The core mask marks {Psi > 0}.
    Raises :class:`TruncationError` if the core enters the band of width
    ``margin`` (fraction of the domain) along an outer edge, or if the
    far-field defect exceeds ``far_field_tol * W`` (None disables this test).
    """
    bg = p.background()
    dirichlet = p.grid.field(bg, "psi_background")
    sp_ = SemilinearProblem(KINDS[p.kind], p.profile, dirichlet, p.options)
    seed_iterations = 0
    if p.seed == "trivial":
        start = bg
    else:
        start, seed_iterations = normalized_seed_iteration(p)
    psi, rep = solve_semilinear(sp_, p.grid.field(start, "psi"))
    mask = psi.values > 0
    if np.any(_outer_band(p.kind, mask, margin)):
        raise TruncationError("vortex core reaches the truncation boundary; enlarge the domain")
    defect = far_field_defect(psi, p)
    if far_field_tol is not None and defect > far_field_tol * p.W:
        raise TruncationError(f"far-field defect {defect:.3g} exceeds {far_field_tol:g} W; enlarge the domain")
    _, ncomp = ndimage.label(mask)
    area = core_area(psi)
    report = VortexReport(
        solve=rep,
        trivial=not mask.any(),
        core_area=area,
        core_components=int(ncomp),
        far_field_defect=defect,
        metadata={"kind": p.kind, "W": p.W, "gamma": p.gamma, "l": p.l, "strength": p.strength,
                  "grid": p.grid.header(), "solver": p.options.to_dict(),
                  "seed_iterations": seed_iterations, "margin": margin,
                  "far_field_tol": far_field_tol},
    )
    return psi, psi.like(mask.astype(float), "core_mask"), report


def field_from_vortex(psi: ScalarChartField, p: FreeBoundaryProblem):
    """Velocity and factor f = Gamma'(Psi) (supported in the core)."""
    if p.kind == "vortex-ring":
        return reconstruct_rotational(psi, p.profile)
    return reconstruct_translational(psi, p.profile)


def is_trivial(psi: ScalarChartField) -> bool:
    return not np.any(psi.values > 0)
