import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy import integrate

from lipdirichlet import kernels as K
from lipdirichlet.errors import CapabilityError, KernelParameterError, ParameterError, SingularityError
from lipdirichlet.spaces import multi_indices

x1, x2, x3, y1, y2, y3 = sp.symbols("x1 x2 x3 y1 y2 y3", real=True)


def _sym_residual(kind):
    if kind == "laplace_2d":
        return -sp.log(sp.sqrt((x1 - y1) ** 2 + (x2 + y2) ** 2)) / (2 * sp.pi), (x1, x2), (y1, y2)
    if kind == "laplace_3d":
        return 1 / (4 * sp.pi * sp.sqrt((x1 - y1) ** 2 + (x2 - y2) ** 2 + (x3 + y3) ** 2)), \
            (x1, x2, x3), (y1, y2, y3)
    R = ((x1 - y1) ** 2 + (x2 - y2) ** 2) * sp.log(sp.sqrt((x1 - y1) ** 2 + (x2 + y2) ** 2)) - 2 * x2 * y2
    return R / (8 * sp.pi), (x1, x2), (y1, y2)


@pytest.mark.parametrize("kind", K.KINDS)
def test_residual_derivatives_match_symbolic(kind):
    R, xs, ys = _sym_residual(kind)
    n = len(xs)
    m = K.as_operator(kind).m
    rng = np.random.default_rng(0)
    X = rng.uniform(0.1, 1, (4, n))
    Y = rng.uniform(0.1, 1, (4, n))
    for al in multi_indices(n, m):
        for be in multi_indices(n, m):
            e = R
            for v, k in zip(xs + ys, tuple(al) + tuple(be)):
                if k:
                    e = sp.diff(e, v, k)
            f = sp.lambdify(xs + ys, e, "numpy")
            ref = np.broadcast_to(f(*X.T, *Y.T), (4,))
            got = K.green_residual(kind, X, Y, al, be)
            assert np.allclose(got, ref, rtol=1e-10, atol=1e-12), (al, be)


def test_fundamental_solution_symbolic_2d():
    r = sp.sqrt(x1 ** 2 + x2 ** 2)
    F = r ** 2 * sp.log(r) / (8 * sp.pi)
    X = np.array([[0.3, -0.7], [1.2, 0.4]])
    for g in multi_indices(2, 4):
        e = F
        for v, k in zip((x1, x2), g):
            if k:
                e = sp.diff(e, v, k)
        ref = sp.lambdify((x1, x2), e, "numpy")(*X.T)
        assert np.allclose(K.fundamental_solution("bilaplace_2d", X, g), ref, rtol=1e-10)


def test_green_function_boundary_conditions():
    rng = np.random.default_rng(1)
    Y = rng.uniform(0.1, 1, (5, 2))
    xb = np.c_[rng.uniform(-1, 1, 5), np.zeros(5)]
    assert np.abs(K.half_space_green("laplace_2d", xb, Y)).max() < 1e-14
    assert np.abs(K.half_space_green("bilaplace_2d", xb, Y)).max() < 1e-14
    assert np.abs(K.half_space_green("bilaplace_2d", xb, Y, (0, 1))).max() < 1e-14
    Y3 = rng.uniform(0.1, 1, (5, 3))
    xb3 = np.c_[rng.uniform(-1, 1, (5, 2)), np.zeros(5)]
    assert np.abs(K.half_space_green("laplace_3d", xb3, Y3)).max() < 1e-14


def test_green_symmetry():
    rng = np.random.default_rng(2)
    X, Y = rng.uniform(0.1, 1, (6, 2)), rng.uniform(0.1, 1, (6, 2))
    for kind in ("laplace_2d", "bilaplace_2d"):
        assert np.allclose(K.half_space_green(kind, X, Y), K.half_space_green(kind, Y, X), atol=1e-14)


def test_residual_on_diagonal_3d():
    x = np.array([0.0, 0.0, 1.0])
    assert math.isclose(float(K.green_residual("laplace_3d", x, x)), 1 / (8 * np.pi), rel_tol=1e-14)


@pytest.mark.parametrize("kind", K.KINDS)
def test_residual_bound_statistic_small_sample(kind):
    rep = K.residual_bound_check(kind, sample_count=2000, rng=5)
    assert np.isfinite(rep["sup"])
    assert rep["drift"] < 2.0
    assert len(rep["per_decade"]) >= 3


def test_descent_from_three_dimensions():
    rep = K.descent_smoke_test()
    assert rep["rel_error"] < 1e-8
    assert abs(rep["laplacian"]) < 1e-12


@pytest.mark.parametrize("op,j", [("laplace_2d", 0), ("laplace_3d", 0), ("bilaplace_2d", 0), ("bilaplace_2d", 1)])
def test_poisson_kernel_homogeneity(op, j):
    n = K.as_operator(op).n
    x = np.random.default_rng(3).uniform(0.1, 1, (4, n))
    d = K.poisson_homogeneity_degree(op, j)
    assert np.allclose(K.poisson_kernel(op, j, 3 * x), 3.0 ** d * K.poisson_kernel(op, j, x), rtol=1e-13)
    assert np.all(np.isfinite(K.poisson_bound_ratio(op, j, x)))


@pytest.mark.parametrize("op,j,moment", [("laplace_2d", 0, 0), ("bilaplace_2d", 0, 0), ("bilaplace_2d", 1, 1)])
def test_poisson_kernel_reproduces_data(op, j, moment):
    # unit datum: int P_j(x, y') dy' = x_n^j
    xn = 0.37
    val = integrate.quad(lambda t: float(K.poisson_kernel(op, j, np.array([t, xn]))), -np.inf, np.inf)[0]
    assert math.isclose(val, xn ** moment, rel_tol=1e-8)


def test_poisson_kernel_3d_mass():
    xn = 0.5
    val = integrate.quad(lambda r: 2 * np.pi * r * float(K.poisson_kernel("laplace_3d", 0, np.array([r, 0, xn]))),
                         0, np.inf)[0]
    assert math.isclose(val, 1.0, rel_tol=1e-8)


def test_model_operator_guards():
    with pytest.raises(CapabilityError):
        K.ModelOperator("stokes")
    with pytest.raises(SingularityError):
        K.fundamental_solution("laplace_2d", np.zeros(2))
    with pytest.raises(CapabilityError):
        K.poisson_kernel("laplace_2d", 1, np.array([0.0, 1.0]))
    assert K.ModelOperator("bilaplace_2d").symbol(np.array([1.0, 2.0])) == 25.0


# --- auxiliary integral -----------------------------------------------------

def test_lemma_integral_closed_form():
    # zeta = 0, a = b = 1: 2 int_0^inf (r + 1)^{-5/2} dr = 4/3
    lhs, rhs, ratio = K.lemma22_integral(1, 1.0, 0.5, 1.0, 1.0, [0.0])
    assert math.isclose(lhs, 4 / 3, rel_tol=1e-8)


@pytest.mark.parametrize("N", [2, 3])
def test_lemma_integral_radial_oracle(N):
    a, b, eps, delta = 0.3, 2.0, 0.5, 1.0
    area = 2 * np.pi if N == 2 else 4 * np.pi
    ref = integrate.quad(lambda r: area * r ** (N - 1) * (r + a) ** (-(N + eps)) * (r + b) ** (-(N - delta)),
                         0, np.inf, limit=200)[0]
    lhs = K.lemma22_integral(N, eps, delta, a, b, [0.0] * N)[0]
    assert math.isclose(lhs, ref, rel_tol=1e-6)


def test_lemma_integral_off_centre_1d():
    a, b, z, eps, delta = 0.5, 0.2, 1.5, 1.0, 0.5
    f = lambda t: (abs(t) + a) ** (-(1 + eps)) * (abs(t - z) + b) ** (-(1 - delta))
    ref = sum(integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in [(-np.inf, 0), (0, z), (z, np.inf)])
    assert math.isclose(K.lemma22_integral(1, eps, delta, a, b, [z])[0], ref, rel_tol=1e-7)


def test_lemma_integral_off_centre_2d():
    a, b, z, eps, delta = 0.5, 0.3, 1.0, 0.5, 1.0

    def f(r, th):
        d = math.hypot(r * math.cos(th) - z, r * math.sin(th))
        return r * (r + a) ** (-(2 + eps)) * (d + b) ** (-(2 - delta))

    ref = 2 * integrate.dblquad(lambda th, r: f(r, th), 0, np.inf, 0, np.pi, epsabs=1e-11)[0]
    assert math.isclose(K.lemma22_integral(2, eps, delta, a, b, [z, 0.0])[0], ref, rel_tol=1e-4)


@pytest.mark.parametrize("args", [(4, 1, 0.5, 1, 1), (1, 0, 0.5, 1, 1), (1, 1, 1.5, 1, 1), (1, 1, 0.5, 0, 1)])
def test_lemma_integral_parameter_errors(args):
    with pytest.raises(ParameterError):
        K.lemma22_integral(*args, [0.0])


# --- weighted operator norms ------------------------------------------------

def test_marginal_profile_of_K():
    r = np.array([0.01, 0.5, 3.0, 40.0])
    assert np.allclose(K.marginal_profile(K.profile_K(), r), np.pi / (1 + r), rtol=1e-10)


@pytest.mark.parametrize("p,s", [(2, 0.5), (1.5, 0.2), (6, 0.9)])
def test_q_bound_mellin_oracle(p, s):
    # int_0^inf pi r^{-e} / (1 + r) dr = pi^2 / sin(pi e), e = a + 1/p = 1 - s
    a = 1 - s - 1 / p
    assert math.isclose(K.q_bound(K.profile_K(), p, a), np.pi ** 2 / np.sin(np.pi * (1 - s)), rel_tol=1e-7)


@given(seed=st.integers(0, 1000))
def test_boyd_norm_is_spectral_norm_for_p2(seed):
    A = np.random.default_rng(seed).uniform(0, 1, (6, 5))
    assert math.isclose(K.boyd_norm(A, 2.0, iters=2000, tol=1e-14), np.linalg.norm(A, 2), rel_tol=1e-8)


def test_boyd_norm_rejects_signed_matrix():
    with pytest.raises(KernelParameterError):
        K.boyd_norm(-np.eye(2), 2)


@pytest.mark.parametrize("which", ["K", "R"])
@pytest.mark.parametrize("p,s", [(1.5, 0.3), (3, 0.7)])
def test_discrete_norm_below_analytic_bound(which, p, s):
    g = K.LogGrid(40, 600)
    a = 1 - s - 1 / p
    prof = K.profile_K() if which == "K" else K.profile_R()
    ratio = K.weighted_operator_norm(which, p, s, g) / K.q_bound(prof, p, a)
    assert 0.9 < ratio <= 1.0


def test_log_grid_cap():
    with pytest.raises(KernelParameterError):
        K.LogGrid(10, 40_001)


def test_bmo_of_log_is_two_over_e():
    assert math.isclose(K.bmo_of_profile(K.log_profile), 2 / math.e, rel_tol=1e-3)


def test_constant_b_gives_zero_commutator():
    from lipdirichlet import geometry as G
    from lipdirichlet.spaces import GridFunction
    dom = G.LipschitzGraphDomain.from_function(lambda x: 0 * x, [0.0], [1.0], 1 / 8)
    grid = dom.volume_grid(1 / 8, height=1.0)
    f = GridFunction(dom, grid, np.ones(grid.shape), order=0)
    assert np.all(K.oscillation_commutator_Tb(lambda P: np.ones(len(P)), f) == 0)
    assert np.all(K.hardy_ops_RK(f, "K") > 0)


def test_mean_drift_of_log():
    b = lambda P: np.log(np.linalg.norm(P, axis=1))
    drift, lf, ratio = K.mean_drift_check(b, np.zeros(2), 0.01, 1.0)
    # ball means of log|x| are log R - 1/2
    assert math.isclose(drift, math.log(100), rel_tol=1e-3)
