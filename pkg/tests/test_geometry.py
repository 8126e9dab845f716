import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lipdirichlet import geometry as G
from lipdirichlet.errors import DomainError, ResolutionError

LSHAPE = [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)]


def test_square_distance_is_exact(rng):
    sq = G.unit_square(1 / 16)
    X = rng.uniform(0, 1, (200, 2))
    exact = np.min(np.concatenate([X, 1 - X], axis=1), axis=1)
    assert np.allclose(sq.distance(X), exact, atol=1e-12)


def test_lshape_geometry():
    L = G.PolygonalDomain2D(LSHAPE, 1 / 16)
    assert math.isclose(L.area, 0.75)
    assert math.isclose(L.perimeter, 4.0)
    X = np.array([[0.25, 0.25], [0.75, 0.75], [0.75, 0.25]])
    assert list(L.contains(X)) == [True, False, True]
    # distance to the re-entrant corner
    assert math.isclose(float(L.distance(np.array([[0.4, 0.4]]))[0]), math.hypot(0.1, 0.1), rel_tol=1e-9)


def test_clockwise_vertices_are_reoriented():
    L = G.PolygonalDomain2D(LSHAPE[::-1], 1 / 8)
    assert L.area > 0


def test_polygon_rejects_bad_input():
    with pytest.raises(DomainError):
        G.PolygonalDomain2D([(0, 0), (1, 0)], 0.1)
    with pytest.raises(DomainError):
        G.PolygonalDomain2D([(0, 0), (1, 1), (1, 0), (0, 1)], 0.1)


def test_graph_distance_flat_and_sine():
    flat = G.LipschitzGraphDomain.from_function(lambda x: 0 * x, [0.0], [1.0], 1 / 32)
    X = np.array([[0.3, 0.2], [0.9, 0.05]])
    assert np.allclose(flat.distance(X), X[:, 1], atol=1e-9)
    dom = G.LipschitzGraphDomain.from_function(lambda x: 0.1 * np.sin(2 * np.pi * x), [0.0], [1.0], 1 / 64)
    # brute-force distance to a fine sampling of the graph
    t = np.linspace(-0.5, 1.5, 400001)
    curve = np.stack([t, 0.1 * np.sin(2 * np.pi * t)], axis=1)
    P = np.array([[0.25, 0.3], [0.6, 0.2], [0.1, 0.5]])
    ref = np.min(np.linalg.norm(P[:, None] - curve[None], axis=2), axis=1)
    assert np.allclose(dom.distance(P), ref, rtol=1e-3)


def test_graph_lip_constant_and_normals():
    dom = G.LipschitzGraphDomain.from_function(lambda x: 0.1 * np.sin(2 * np.pi * x), [0.0], [1.0], 1 / 256)
    assert abs(dom.lip_constant - 0.2 * np.pi) < 1e-3
    nu = dom.normal_at(np.array([[0.0]]))
    assert np.allclose(np.linalg.norm(nu, axis=-1), 1.0)
    assert nu.reshape(-1)[1] < 0  # outward means below the graph


def test_unit_normal_on_square():
    sq = G.unit_square(1 / 8)
    assert np.allclose(G.unit_normal(sq, np.array([0.5, 0.0])), [0, -1])
    assert np.allclose(G.unit_normal(sq, np.array([1.0, 0.3])), [1, 0])


def test_bmo_of_sign_function():
    # the centred ball at the jump gives mean deviation 1, the sup
    S = G.interval_samples(np.sign, -1.0, 1.0, 2000)
    b = G.bmo_seminorm(S)
    assert 0.95 <= b <= 1.0 + 1e-12


def test_bmo_of_constant_vanishes():
    S = G.interval_samples(lambda x: 3 + 0 * x, 0, 1, 200)
    assert G.bmo_seminorm(S) < 1e-13


@given(c=st.floats(-5, 5), shift=st.floats(-10, 10))
def test_bmo_homogeneous_and_shift_invariant(c, shift):
    base = G.interval_samples(np.sin, 0, 6, 300)
    b0 = G.bmo_seminorm(base, max_centres=100)
    S = G.SampleSet(base.points, c * base.values + shift, base.weights, base.resolution)
    assert math.isclose(G.bmo_seminorm(S, max_centres=100), abs(c) * b0, rel_tol=1e-9, abs_tol=1e-9)


def test_infinitesimal_oscillation_of_lipschitz_function_shrinks():
    S = G.interval_samples(lambda x: x, 0, 1, 2000)
    out = G.infinitesimal_oscillation(S, eps_ladder=(0.2, 0.1, 0.05))
    vals = [v for _, v in out]
    assert vals[0] > vals[1] > vals[2]
    # double mean of |x - y| over an interval of length 2 eps is 2 eps / 3
    assert math.isclose(vals[1], 0.2 / 3, rel_tol=0.02)


def test_infinitesimal_oscillation_rejects_fine_ladder():
    S = G.interval_samples(lambda x: x, 0, 1, 10)
    with pytest.raises(ResolutionError):
        G.infinitesimal_oscillation(S, eps_ladder=(0.1, 0.01))
    with pytest.raises(ResolutionError):
        G.infinitesimal_oscillation(S, eps_ladder=(0.1, 0.2))


def test_sawtooth_derivative_matches_difference_quotient():
    eps = 0.2
    phi, dphi = G.sawtooth_phi(eps), G.sawtooth_dphi(eps)
    x = np.array([1e-3, 0.01, 0.3])
    h = 1e-7 * x
    fd = (phi(x + h) - phi(x - h)) / (2 * h)
    assert np.allclose(fd, dphi(x), atol=1e-6)
    assert phi(np.array([0.0]))[0] == 0.0


def test_sawtooth_bmo_scales_linearly():
    rows = G.sawtooth_study([0.1, 0.4], count=2000, max_centres=600)
    r = [row["bmo_over_eps"] for row in rows]
    assert max(r) / min(r) < 1.2
    for row in rows:
        assert 0.9 <= row["sup_ratio"] <= 1.2


def test_whitney_cubes_satisfy_distance_band():
    sq = G.unit_square(1 / 16)
    cubes = G.whitney_decompose(sq, 1 / 64)
    C = np.array([c.center for c in cubes])
    S = np.array([c.side for c in cubes])
    # distance from the cube to the boundary, exact for the square
    gap = np.min(np.concatenate([C - S[:, None] / 2, 1 - C - S[:, None] / 2], axis=1), axis=1)
    diam = S * math.sqrt(2)
    assert np.all(gap >= diam * (1 - 1e-9))
    big = S > 1 / 64 + 1e-12
    assert np.all(gap[big] <= 4 * diam[big] * (1 + 1e-9))
    # disjoint interiors: total area at most the square
    assert np.sum(S ** 2) <= 1.0 + 1e-12


def test_whitney_overlap_bounded():
    sq = G.unit_square(1 / 16)
    cubes = G.whitney_decompose(sq, 1 / 128)
    pts = np.random.default_rng(0).uniform(0.02, 0.98, (2000, 2))
    assert G.whitney_overlap(cubes, pts, 1.25) <= 4


def test_regularized_distance_band_and_gradient(rng):
    sq = G.unit_square(1 / 16)
    X = rng.uniform(0.03, 0.97, (300, 2))
    val, grad, rep = G.regularized_distance(sq, X)
    assert 0.9 <= rep["c1"] <= rep["c2"] <= 1.1
    assert rep["grad_max"] < 6.0


@pytest.mark.parametrize("lo", [0.05, 0.0125, 0.003])
def test_regularized_distance_reproduces_flat_distance(lo, rng):
    # away from the medial axis the local affine models agree
    sq = G.unit_square(1 / 16)
    X = np.c_[rng.uniform(0.3, 0.7, 200), rng.uniform(lo, 2 * lo, 200)]
    val, grad, rep = G.regularized_distance(sq, X)
    assert np.allclose(val, X[:, 1], rtol=1e-10)
    assert rep["hessian_rho_max"] < 1e-6


def test_regularized_distance_needs_interior_points():
    sq = G.unit_square(1 / 16)
    with pytest.raises(DomainError):
        G.regularized_distance(sq, np.array([[1.5, 0.5]]))


def test_boundary_grid_measure():
    sq = G.unit_square(1 / 16)
    bg = sq.boundary_grid(1 / 32)
    assert math.isclose(bg.measure, 4.0, rel_tol=1e-12)
    dom = G.LipschitzGraphDomain.from_function(lambda x: 0.1 * np.sin(2 * np.pi * x), [0.0], [1.0], 1 / 256)
    # arclength of one period of 0.1 sin(2 pi x)
    t = np.linspace(0, 1, 200001)
    ref = np.trapezoid(np.sqrt(1 + (0.2 * np.pi * np.cos(2 * np.pi * t)) ** 2), t)
    assert math.isclose(dom.boundary_grid().measure, ref, rel_tol=1e-4)
