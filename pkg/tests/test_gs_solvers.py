import numpy as np
import pytest
import scipy.sparse.linalg as spla
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from beltrami.errors import ConvergenceError, StagnationError
from beltrami.fields import ChartTag, Grid, convergence_order
from beltrami.gs_solvers import (LinearSolver, SemilinearProblem, SolverOptions, assemble, nonlinear_residual,
                                 operator_apply, pcg, solve_semilinear, with_options)
from beltrami.profiles import Profile


def square(n, chart=ChartTag.CARTESIAN_XY, lo=(0.0, 0.0), hi=(1.0, 1.0)):
    return Grid.uniform(chart, lo, hi, (n, n))


def annulus(n):
    return square(n, ChartTag.MERIDIONAL_RZ, (0.5, 0.0), (1.5, 1.0))


def zero(g):
    return g.field(np.zeros(g.shape))


# -- the discrete operators -------------------------------------------------------------


@pytest.mark.parametrize("kind,fn", [
    ("laplacian-xy", lambda x, y: 2 * x - 3 * y + 1),
    ("laplacian-xy", lambda x, y: x * x - y * y),
    ("grad-shafranov-rz", lambda r, z: r * r),
    ("grad-shafranov-rz", lambda r, z: 3 * z - 1),
    ("grad-shafranov-rz", lambda r, z: r * r * z),
])
def test_operator_annihilates_its_kernel(kind, fn):
    g = annulus(17) if kind == "grad-shafranov-rz" else square(17)
    assert np.abs(operator_apply(kind, g.sample(fn)).values).max() < 1e-10


def test_grad_shafranov_of_r4_matches_symbolic_value():
    expected = sp.lambdify((oracles.r, oracles.z), oracles.gs_operator(oracles.r**4), "numpy")
    g = annulus(21)
    out = operator_apply("grad-shafranov-rz", g.sample(lambda r, z: r**4)).values
    r, z = (a[1:-1, 1:-1] for a in g.mesh())
    # the conservative stencil is exact up to O(h^2) on r^4
    np.testing.assert_allclose(out, expected(r, z), atol=2 * g.spacing[0] ** 2 * 8)
    np.testing.assert_allclose(expected(r, z), -8 * r * r, rtol=1e-14)


@pytest.mark.parametrize("kind", ["laplacian-xy", "grad-shafranov-rz"])
def test_assembled_matrix_is_symmetric_positive_definite(kind):
    g = annulus(12) if kind == "grad-shafranov-rz" else square(12)
    a = assemble(kind, g)
    assert abs(a - a.T).max() < 1e-12 * abs(a).max()
    assert spla.eigsh(a, k=1, which="SA", return_eigenvectors=False)[0] > 0


@pytest.mark.parametrize("kind", ["laplacian-xy", "grad-shafranov-rz"])
def test_assembled_matrix_matches_operator(kind):
    g = annulus(10) if kind == "grad-shafranov-rz" else square(10)
    rng = np.random.default_rng(0)
    v = np.zeros(g.shape)
    v[1:-1, 1:-1] = rng.standard_normal((8, 8))
    direct = operator_apply(kind, g.field(v)).values
    w = np.ones((8, 8)) if kind == "laplacian-xy" else 1 / g.axes()[0][1:-1, None] * np.ones((8, 8))
    np.testing.assert_allclose(assemble(kind, g) @ v[1:-1, 1:-1].ravel(), (w * direct).ravel(), atol=1e-10)


def test_operator_rejects_wrong_chart_and_tiny_grid():
    with pytest.raises(ValueError):
        operator_apply("grad-shafranov-rz", square(5).field(np.zeros((5, 5))))
    with pytest.raises(ValueError):
        operator_apply("biharmonic", square(5).field(np.zeros((5, 5))))
    g = Grid(ChartTag.CARTESIAN_XY, (0, 0), (1, 1), (2, 4))
    with pytest.raises(ValueError):
        operator_apply("laplacian-xy", g.field(np.zeros(g.shape)))


# -- linear solves --------------------------------------------------------------------------------


@pytest.mark.parametrize("kind,fn", [
    ("laplacian-xy", lambda x, y: x * x - y * y + x * y),
    ("grad-shafranov-rz", lambda r, z: r * r * z + r**4 - 4 * r * r * z * z),
])
def test_linear_solve_reproduces_discrete_harmonic_functions(kind, fn):
    g = annulus(40) if kind == "grad-shafranov-rz" else square(40)
    exact = g.sample(fn)
    solver = LinearSolver(kind, g, SolverOptions())
    out, its = solver.solve(np.zeros((38, 38)), exact.values)
    assert its > 0
    np.testing.assert_allclose(out, exact.values, atol=1e-9)


def test_linear_solve_with_and_without_preconditioner_agree():
    g = annulus(30)
    rhs = np.ones((28, 28))
    a, _ = LinearSolver("grad-shafranov-rz", g, SolverOptions()).solve(rhs, np.zeros(g.shape))
    b, _ = LinearSolver("grad-shafranov-rz", g, SolverOptions(preconditioner="none")).solve(rhs, np.zeros(g.shape))
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_discrete_maximum_principle():
    g = square(25)
    out, _ = LinearSolver("laplacian-xy", g, SolverOptions()).solve(np.ones((23, 23)), np.zeros(g.shape))
    assert out.min() >= 0.0
    assert out[1:-1, 1:-1].min() > 0


def test_pcg_solves_small_spd_system_and_reports_failure():
    a = assemble("laplacian-xy", square(12))
    b = np.arange(a.shape[0], dtype=float)
    x, its = pcg(a, b, rtol=1e-12)
    np.testing.assert_allclose(a @ x, b, atol=1e-9 * np.linalg.norm(b))
    assert pcg(a, np.zeros_like(b))[1] == 0
    with pytest.raises(ConvergenceError) as info:
        pcg(a, b, rtol=1e-14, max_iter=2)
    assert len(info.value.history) == 3
    with pytest.raises(ConvergenceError):
        pcg(-a, b)


# -- semilinear problems -----------------------------------------------------------------------


def test_solver_options_validation():
    for bad in ({"tol": 0}, {"omega": 1.5}, {"method": "sor"}, {"preconditioner": "ilu"}, {"max_iter": -1}):
        with pytest.raises(ValueError):
            SolverOptions(**bad)
    with pytest.raises(ValueError):
        SolverOptions.from_spec({"tolerance": 1e-3})
    assert SolverOptions.from_spec(SolverOptions(tol=1e-4).to_dict()) == SolverOptions(tol=1e-4)


def test_problem_validation():
    g = square(9)
    with pytest.raises(ValueError):
        SemilinearProblem("grad-shafranov-rz", Profile.power(2), zero(g))
    with pytest.raises(ValueError):
        SemilinearProblem("laplacian-xy", Profile.power(2), zero(g), source=zero(square(11)))
    p = SemilinearProblem("laplacian-xy", Profile.power(2), zero(g))
    with pytest.raises(ValueError):
        solve_semilinear(p, zero(square(11)))
    with pytest.raises(ValueError):
        solve_semilinear(p, g.field(np.ones(g.shape)))


def test_zero_data_converges_at_iteration_zero():
    g = annulus(17)
    p = SemilinearProblem("grad-shafranov-rz", Profile.power(2), zero(g))
    psi, rep = solve_semilinear(p, zero(g))
    assert rep.converged and rep.iterations == 0
    assert np.all(psi.values == 0)


def test_linear_profile_solves_helmholtz_problem():
    """-Lap psi = k^2 psi + S with the exact sine; k below the first eigenvalue."""
    errs, hs = [], []
    k = 2.0
    for n in (17, 33, 65):
        g = square(n)
        exact = g.sample(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        src = g.field((2 * np.pi**2 - k * k) * exact.values)
        p = SemilinearProblem("laplacian-xy", Profile.linear(k), zero(g), SolverOptions(tol=1e-9), src)
        psi, rep = solve_semilinear(p, zero(g))
        assert rep.converged
        errs.append(np.abs(psi.values - exact.values).max())
        hs.append(g.spacing[0])
    assert np.all(np.abs(convergence_order(errs, hs) - 2) < 0.2)


def _manufactured(kind, n, method="picard"):
    if kind == "laplacian-xy":
        g = square(n)
        psi = sp.sin(sp.pi * oracles.r) * sp.sin(sp.pi * oracles.z)
    else:
        g = annulus(n)
        psi = sp.sin(sp.pi * (oracles.r - sp.Rational(1, 2))) * sp.sin(sp.pi * oracles.z)
    exact, source = oracles.manufactured(kind, psi, lambda s: 2 * sp.Max(s, 0) ** 3)
    p = SemilinearProblem(kind, Profile.power(2), zero(g), SolverOptions(tol=1e-10, method=method),
                          g.sample(source))
    out, rep = solve_semilinear(p, zero(g))
    return np.abs(out.values - g.sample(exact).values).max(), rep


@pytest.mark.parametrize("kind", ["laplacian-xy", "grad-shafranov-rz"])
def test_picard_and_newton_agree_on_manufactured_problem(kind):
    e1, r1 = _manufactured(kind, 33)
    e2, r2 = _manufactured(kind, 33, "newton")
    assert r1.converged and r2.converged
    assert r2.iterations < r1.iterations
    assert e1 == pytest.approx(e2, rel=1e-6)


def test_residual_history_and_report():
    _, rep = _manufactured("laplacian-xy", 17)
    assert rep.final_residual < 1e-10
    assert rep.residual_history[0] > rep.final_residual
    assert len(rep.cg_iterations) == rep.iterations
    assert rep.to_dict()["method"] == "picard"


def test_max_iter_returns_unconverged_report():
    g = square(17)
    src = g.field(np.ones(g.shape))
    p = SemilinearProblem("laplacian-xy", Profile.power(2), zero(g), SolverOptions(max_iter=2, omega=0.1), src)
    psi, rep = solve_semilinear(p, zero(g))
    assert not rep.converged and rep.iterations == 2 and len(rep.residual_history) == 3


def test_stagnation_is_detected():
    """A linear profile past the first eigenvalue makes Picard diverge from the start."""
    g = square(17)
    src = g.field(np.ones(g.shape))
    p = SemilinearProblem("laplacian-xy", Profile.linear(6.0), zero(g),
                          SolverOptions(max_iter=400, omega=1.0, stagnation_window=5), src)
    with pytest.raises(ConvergenceError) as info:
        solve_semilinear(p, zero(g))
    assert isinstance(info.value, StagnationError) or "finite" in str(info.value)
    assert len(info.value.history) > 1


def test_with_options_copies():
    p = SemilinearProblem("laplacian-xy", Profile.power(2), zero(square(9)))
    q = with_options(p, tol=1e-3)
    assert q.options.tol == 1e-3 and p.options.tol == 1e-9


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 5.0))
def test_nonlinear_residual_scales_with_linear_profile(a):
    g = square(9)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(g.shape)
    p = SemilinearProblem("laplacian-xy", Profile.linear(1.5), zero(g))
    np.testing.assert_allclose(nonlinear_residual(p, a * v), a * nonlinear_residual(p, v), rtol=1e-10, atol=1e-10)
