import math

import numpy as np
import pytest
import sympy as sp

from lipdirichlet import geometry as G
from lipdirichlet import solver as S
from lipdirichlet import spaces as SP
from lipdirichlet.errors import AssemblyError, CapabilityError, CompatibilityError, ParameterError

pi = np.pi
SINE_F = lambda X: 2 * pi ** 2 * np.sin(pi * X[:, 0]) * np.sin(pi * X[:, 1])


def sine_exact(P):
    return np.sin(pi * P[:, 0]) * np.sin(pi * P[:, 1])


# --- independent Q1 quadrature used as the assembly oracle ------------------

def q1_form_by_quadrature(grid, u, v, a=lambda X: np.ones(len(X)), c=lambda X: np.zeros(len(X)), order=2):
    """int a grad u . grad v + c u v for bilinear interpolants, order x order Gauss per cell."""
    U = u.reshape(grid.nx + 1, grid.ny + 1)
    V = v.reshape(grid.nx + 1, grid.ny + 1)
    g, w = np.polynomial.legendre.leggauss(order)
    g, w = 0.5 * (g + 1), 0.5 * w
    hx, hy = grid.hx, grid.hy
    total = 0.0
    for i in range(grid.nx):
        for j in range(grid.ny):
            cu = U[i:i + 2, j:j + 2]
            cv = V[i:i + 2, j:j + 2]
            for s, ws in zip(g, w):
                for t, wt in zip(g, w):
                    X = np.array([[grid.lo[0] + (i + s) * hx, grid.lo[1] + (j + t) * hy]])
                    def val(C):
                        return (C[0, 0] * (1 - s) * (1 - t) + C[1, 0] * s * (1 - t)
                                + C[0, 1] * (1 - s) * t + C[1, 1] * s * t)
                    def grad(C):
                        gx = ((C[1, 0] - C[0, 0]) * (1 - t) + (C[1, 1] - C[0, 1]) * t) / hx
                        gy = ((C[0, 1] - C[0, 0]) * (1 - s) + (C[1, 1] - C[1, 0]) * s) / hy
                        return np.array([gx, gy])
                    dens = a(X)[0] * grad(cu) @ grad(cv) + c(X)[0] * val(cu) * val(cv)
                    total += ws * wt * hx * hy * dens
    return total


def test_form_matches_independent_quadrature(rng):
    dom = G.unit_square(1 / 8)
    a = lambda X: 1 + 0.5 * np.sin(3 * X[:, 0]) * np.cos(2 * X[:, 1])
    c = lambda X: 2 + X[:, 0] * X[:, 1]
    coeffs = S.CoefficientField({((1, 0), (1, 0)): a, ((0, 1), (0, 1)): a, ((0, 0), (0, 0)): c})
    form = S.assemble_form(coeffs, dom, 1, 1 / 8)
    u = rng.standard_normal(form.grid.size)
    v = rng.standard_normal(form.grid.size)
    ref = q1_form_by_quadrature(form.grid, u, v, a, c)
    assert abs(form(u, v) - ref) <= 1e-8 * max(1.0, abs(ref))


def test_form_value_on_sine():
    # L(u, u) for u = sin(pi x) sin(pi y) tends to int |grad u|^2 = pi^2 / 2
    vals = []
    for N in (16, 32):
        form = S.assemble_form(S.CoefficientField.laplacian(), G.unit_square(1 / N), 1, 1 / N)
        ex = sine_exact(form.grid.points())
        vals.append(form(ex, ex).real)
    assert abs(vals[1] - pi ** 2 / 2) < abs(vals[0] - pi ** 2 / 2)
    assert math.isclose(vals[1], pi ** 2 / 2, rel_tol=1e-2)


def test_form_is_hermitian_for_real_symmetric_coefficients():
    form = S.assemble_form(S.oscillating_coefficient(0.3), G.unit_square(1 / 8), 1, 1 / 8)
    assert form.hermitian
    skew = S.CoefficientField({((1, 0), (1, 0)): 1.0, ((0, 1), (0, 1)): 1.0, ((1, 0), (0, 0)): 1.0})
    assert not S.assemble_form(skew, G.unit_square(1 / 8), 1, 1 / 8).hermitian


def test_assembly_rejects_unsupported_geometry():
    L = G.PolygonalDomain2D([(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)], 1 / 8)
    with pytest.raises(AssemblyError):
        S.assemble_form(S.CoefficientField.laplacian(), L, 1, 1 / 8)
    with pytest.raises(AssemblyError):
        S.TensorGrid.for_domain(G.unit_square(1 / 8), 0.3)
    with pytest.raises(CapabilityError):
        S.assemble_form(S.CoefficientField.bilaplacian(), G.unit_square(1 / 8), 2, 1 / 8)


def test_coefficient_field_guards():
    with pytest.raises(ParameterError):
        S.CoefficientField({((0, 0), (0, 0)): 1.0})
    with pytest.raises(ParameterError):
        S.CoefficientField.laplacian().with_lower_order({((1, 0), (1, 0)): 1.0})
    A = S.oscillating_coefficient(0.2)
    X = np.random.default_rng(0).uniform(0, 1, (20, 2))
    assert not A.is_constant(X)
    assert A.mean(X).is_constant(X)
    assert math.isclose(A.scaled(3.0).kappa1(X), 3 * A.kappa1(X))


# --- second-order solves -----------------------------------------------------

def test_manufactured_solution_second_order():
    errs = []
    for N in (16, 32, 64):
        h = 1 / N
        prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(), 1, F=SINE_F)
        W, form, info = S.solve_homogeneous(prob, h)
        errs.append(np.max(np.abs(W - sine_exact(form.grid.points()))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_zero_data_gives_zero_solution():
    h = 1 / 16
    prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(), 1)
    U, diag = S.solve_dirichlet(prob, SP.NormParams.from_s(2, 0.5), h)
    assert np.max(np.abs(U)) <= 1e-8
    assert diag["U_norm"] <= 1e-8


def test_harmonic_polynomial_reproduced():
    h = 1 / 16
    P = SP.PolynomialField({(2, 0): 1.0, (0, 2): -1.0, (1, 0): 0.3})
    prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(), 1, data=P)
    U, _ = S.solve_dirichlet(prob, None, h)
    X = S.TensorGrid.for_domain(prob.domain, h).points()
    assert np.max(np.abs(U - P.value(X))) < 1e-10


def test_solution_independent_of_lift():
    h = 1 / 16
    T = SP.TrigField.random(2, np.random.default_rng(0))
    prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(), 1, F=SINE_F, data=T)
    U1, _ = S.solve_dirichlet(prob, None, h)
    U2, _ = S.solve_dirichlet(prob, None, h, lift="zero")
    assert np.max(np.abs(U1 - U2)) < 1e-9


def test_complex_coefficients_use_gmres():
    h = 1 / 32
    A = S.CoefficientField.laplacian(scale=1 + 0.1j)
    F = lambda X: SINE_F(X) * (1 + 0.1j)
    W, form, info = S.solve_homogeneous(S.DirichletProblem(G.unit_square(h), A, 1, F=F), h)
    assert info["residual"] < 1e-10
    assert np.max(np.abs(W - sine_exact(form.grid.points()))) < 5e-3


def test_kappa0_of_laplacian_and_oscillating_coefficient():
    dom = G.unit_square(1 / 16)
    k = S.estimate_kappa0(S.assemble_form(S.CoefficientField.laplacian(), dom, 1, 1 / 16))
    assert math.isclose(k, 1.0, rel_tol=1e-8)
    ko = S.estimate_kappa0(S.assemble_form(S.oscillating_coefficient(0.5), dom, 1, 1 / 16))
    assert 0.5 - 1e-9 <= ko < 1.0


def test_trace_equivalence_ratios_bounded():
    rep = S.trace_equivalence_check(S.CoefficientField.laplacian(), G.unit_square(1 / 16),
                                    SP.NormParams.from_s(2, 0.5), samples=3, rng=0)
    assert np.all(np.isfinite(rep["ratios"]))
    assert rep["max"] / rep["min"] < 10.0


def test_estimate_ratio_drift_small_grid():
    T = SP.TrigField.random(2, np.random.default_rng(1))
    bg = G.unit_square(1 / 128).boundary_grid(1 / 128)
    ps = [SP.NormParams.from_s(2, s) for s in (0.25, 0.75)]
    out = []
    for N in (16, 32):
        h = 1 / N
        prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(), 1,
                                  F=lambda X: np.sin(2 * X[:, 0] + X[:, 1]), data=T, bgrid=bg)
        _, d = S.solve_dirichlet(prob, None, h, norm_params=ps)
        out.append([r["ratio"] for r in d["norms"]])
    out = np.array(out)
    assert np.all(out.max(0) / out.min(0) < 2.0)


def test_normal_data_reconstructed_on_plane_domains():
    # in 2-D each level has as many relations as unknowns, so every family {g_k} is admissible
    h = 1 / 16
    bg = G.unit_square(h).boundary_grid(h / 4)
    g0 = np.sin(2 * pi * bg.param)
    g1 = np.cos(bg.param)
    prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.bilaplacian(), 2,
                              normal_data=[g0, g1], bgrid=bg)
    from lipdirichlet.extenders import normal_data_map
    back = normal_data_map(prob.data)
    assert np.allclose(back[0], g0) and np.allclose(back[1], g1)
    with pytest.raises(ParameterError):
        S.DirichletProblem(G.unit_square(h), S.CoefficientField.bilaplacian(), 2, normal_data=[g0, g1])


def test_incompatible_array_rejected():
    bg = G.unit_square(1 / 32).boundary_grid(1 / 32)
    fd = SP.WhitneyArray.from_field(bg, 2, SP.TrigField.random(2, np.random.default_rng(0)))
    SP.require_compatible(fd)
    with pytest.raises(CompatibilityError):
        SP.require_compatible(fd.perturbed((0, 1), 1.0))


def test_problem_order_mismatch():
    with pytest.raises(ParameterError):
        S.DirichletProblem(G.unit_square(1 / 8), S.CoefficientField.laplacian(), 2)


# --- frozen coefficients and Fredholm ---------------------------------------

def test_frozen_iteration_constant_coefficients_one_step():
    h = 1 / 16
    prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(scale=2.5), 1, F=SINE_F)
    r = S.frozen_coefficient_iteration(prob, h)
    assert r.error_vs_direct < 1e-12
    assert np.max(np.abs(r.iterates[1] - r.direct)) < 1e-12 * np.max(np.abs(r.direct))


def test_frozen_contraction_monotone_and_scale_invariant():
    h = 1 / 16
    F = lambda X: np.exp(X[:, 0]) * np.cos(3 * X[:, 1])
    qs = [S.contraction_factor(S.DirichletProblem(G.unit_square(h), S.oscillating_coefficient(a), 1, F=F), h)
          for a in (0.0, 0.05, 0.2, 0.5)]
    assert all(a < b for a, b in zip(qs, qs[1:]))
    q3 = S.contraction_factor(S.DirichletProblem(G.unit_square(h), S.oscillating_coefficient(0.2).scaled(3.0),
                                                 1, F=F), h)
    assert math.isclose(q3, qs[2], rel_tol=1e-3)


def test_frozen_iteration_matches_direct():
    h = 1 / 16
    F = lambda X: np.exp(X[:, 0]) * np.cos(3 * X[:, 1])
    r = S.frozen_coefficient_iteration(S.DirichletProblem(G.unit_square(h), S.oscillating_coefficient(0.05), 1,
                                                          F=F), h)
    assert r.converged and not r.diverged
    assert r.error_vs_direct < 1e-6


@pytest.mark.parametrize("mass,kernel", [(None, 0), (3.0, 0), (-2 * pi ** 2, 1)])
def test_fredholm_kernel_dimension(mass, kernel):
    # -Delta - 2 pi^2 is near the first Dirichlet eigenvalue 2 pi^2
    rep = S.fredholm_lower_order_demo(S.CoefficientField.laplacian(mass=mass), rng=0)
    assert rep["kernel"] == kernel
    assert rep["index"] == 0
    if kernel == 0:
        assert np.all(np.isfinite(rep["estimate_ratios"]))


# --- fourth order ------------------------------------------------------------

def _clamped_manufactured():
    x, y = sp.symbols("x y")
    u = sp.sin(sp.pi * x) ** 2 * sp.sin(sp.pi * y) ** 2
    f = sp.diff(u, x, 4) + 2 * sp.diff(u, x, 2, y, 2) + sp.diff(u, y, 4)
    return sp.lambdify((x, y), u, "numpy"), sp.lambdify((x, y), f, "numpy")


def test_fourth_order_manufactured_convergence():
    u, f = _clamped_manufactured()
    errs = []
    for N in (16, 32):
        h = 1 / N
        prob = S.DirichletProblem(G.unit_square(h), S.CoefficientField.bilaplacian(), 2,
                                  F=lambda X: f(X[:, 0], X[:, 1]), data=(0.0, 0.0))
        U, d = S.fourth_order_solve(prob, h)
        P = d["grid"].points()
        errs.append(np.max(np.abs(U.ravel() - u(P[:, 0], P[:, 1]))))
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_fourth_order_guards():
    with pytest.raises(CapabilityError):
        S.fourth_order_solve(S.DirichletProblem(G.unit_square(1 / 8), S.CoefficientField(
            {((2, 0), (2, 0)): lambda X: 1 + X[:, 0], ((0, 2), (0, 2)): 1.0}, 2, 2), 2), 1 / 8)
    with pytest.raises(ParameterError):
        S.fourth_order_solve(S.DirichletProblem(G.unit_square(1 / 8), S.CoefficientField.laplacian(), 1), 1 / 8)


def test_corner_profile_satisfies_clamped_data():
    # Theta(0) = Theta(pi/2) = 0; the omega-derivative at the edges is the normal datum
    assert abs(float(S.corner_profile(0.0))) < 1e-15
    assert abs(float(S.corner_profile(pi / 2))) < 1e-15
    w = np.array([0.3, 1.1])
    h = 1e-6
    fd = (S.corner_profile(w + h) - S.corner_profile(w - h)) / (2 * h)
    assert np.allclose(S.corner_profile_derivative(w), fd, atol=1e-8)
    # r Theta is biharmonic: Theta'''' + 4 Theta'' = 0 for n = 1 homogeneity
    th = sp.symbols("w")
    T = (th - sp.pi / 2) * sp.sin(th) - th * sp.cos(th)
    assert sp.simplify(sp.diff(T, th, 4) + 2 * sp.diff(T, th, 2) + T) == 0


def test_corner_demo_small_ladder():
    res = S.biharmonic_corner_demo(ladder=(32, 64))
    assert res["increasing"]
    assert abs(res["rows"][-1]["c_fit"] / S.CORNER_TARGET - 1) < 0.1


def test_corner_fit_needs_resolution():
    from lipdirichlet.errors import ResolutionError
    with pytest.raises(ResolutionError):
        S.fit_corner_amplitude(np.zeros((5, 5)), 0.25)
