"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget."""

import math
import time

import numpy as np
import pytest

from lipdirichlet import extenders as E
from lipdirichlet import geometry as G
from lipdirichlet import kernels as K
from lipdirichlet import solver as S
from lipdirichlet import spaces as SP

LSHAPE = [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)]
pi = np.pi


def test_criterion_01_corner_asymptotics(criterion):
    t0 = time.time()
    rep = S.biharmonic_corner_demo(ladder=(32, 64, 128), g1=1.0)
    dt = time.time() - t0
    c = rep["rows"][-1]["c_fit"]
    rel = abs(c - S.CORNER_TARGET) / S.CORNER_TARGET
    ok = rel <= 0.1 and rep["increasing"] and dt < 300
    semis = ", ".join(f"{r['W22_seminorm']:.4g}" for r in rep["rows"])
    assert criterion(1, ok, f"c = {c:.5f} (target {S.CORNER_TARGET:.5f}, rel {rel:.3f}); "
                            f"W22 = [{semis}]; {dt:.1f} s")


def test_criterion_02_sawtooth_bmo(criterion):
    t0 = time.time()
    rows = G.sawtooth_study([0.05, 0.1, 0.2, 0.4])
    dt = time.time() - t0
    q = [r["bmo_over_eps"] for r in rows]
    sup_ok = all(0.9 <= r["sup_ratio"] <= 1.2 for r in rows)
    band = max(q) / min(q)
    ok = band < 3.0 and sup_ok and dt < 60
    assert criterion(2, ok, f"bmo/eps in [{min(q):.4f}, {max(q):.4f}] (band {band:.3f}); "
                            f"sup ratios ok = {sup_ok}; {dt:.1f} s")


def test_criterion_03_residual_bound(criterion):
    t0 = time.time()
    drifts = {k: K.residual_bound_check(k, sample_count=10_000, decades=4, rng=0)["drift"] for k in K.KINDS}
    dt = time.time() - t0
    ok = all(d < 2.0 for d in drifts.values()) and dt < 120
    assert criterion(3, ok, ", ".join(f"{k} drift {d:.3f}" for k, d in drifts.items()) + f"; {dt:.1f} s")


def test_criterion_04_operator_norm_scaling(criterion):
    t0 = time.time()
    rows = K.kernel_norm_table(ps=(1.5, 2, 3, 6), ss=tuple(np.round(np.arange(1, 10) / 10, 1)),
                               ops=("K", "T"))
    dt = time.time() - t0
    bands = {}
    for op in ("K", "T"):
        st = [r["statistic"] for r in rows if r["op"] == op]
        bands[op] = max(st) / min(st)
    ratios = [r["ratio"] for r in rows if np.isfinite(r["ratio"])]
    ok = all(b < 4.0 for b in bands.values()) and max(ratios) <= 1.0 and dt < 600
    assert criterion(4, ok, f"band K {bands['K']:.3f}, band T {bands['T']:.3f}; "
                            f"max norm/bound {max(ratios):.4f}; {dt:.1f} s")


def _setup(name, h):
    if name == "graph":
        dom = G.LipschitzGraphDomain.from_function(lambda x: 0.1 * np.sin(2 * pi * x), [0.0], [1.0], h / 4)
        return dom, dom.volume_grid(h, height=0.6), dom.boundary_grid(), 1.0
    dom = G.unit_square(h) if name == "square" else G.PolygonalDomain2D(LSHAPE, h)
    return dom, dom.volume_grid(), dom.boundary_grid(h / 4), None


def test_criterion_05_trace_extension_round_trip(criterion):
    s = 0.5
    hs = (1 / 16, 1 / 32, 1 / 64)
    worst_rate = math.inf
    worst_exact = 0.0
    for name in ("square", "lshape", "graph"):
        setups = [_setup(name, h) for h in hs]
        for m in (1, 2):
            for seed in range(3):
                errs = []
                for dom, grid, bg, per in setups:
                    fd = SP.WhitneyArray.from_field(bg, m, SP.TrigField.random(2, np.random.default_rng(seed),
                                                                               period=per))
                    U = E.boundary_extension_E(fd, dom, grid=grid)
                    errs.append(E.round_trip_error(fd, E.higher_trace(U, m, bg), 2)["error"])
                rate = math.log(errs[0] / errs[-1]) / math.log(hs[0] / hs[-1])
                worst_rate = min(worst_rate, rate)
            # exactness: constant and affine data; on the periodic graph only x'-independent ones
            dom, grid, bg, per = setups[0]
            for deg in range(m):
                P = SP.PolynomialField.random(2, deg, np.random.default_rng(7))
                if per is not None:
                    P = SP.PolynomialField({g: c for g, c in P.coeffs.items() if g[0] == 0})
                fd = SP.WhitneyArray.from_field(bg, m, P)
                U = E.boundary_extension_E(fd, dom, grid=grid)
                worst_exact = max(worst_exact, E.round_trip_error(fd, E.higher_trace(U, m, bg), 2)["error"])
    ext = {}
    for m in (1, 2):
        vals = []
        for h in (1 / 16, 1 / 32):
            dom, grid, bg, _ = _setup("lshape", h)
            fd = SP.WhitneyArray.from_field(bg, m, SP.TrigField.random(2, np.random.default_rng(0)))
            vals.append(E.extension_norm_ratio(fd, dom, SP.NormParams.from_s(2, s, m), grid=grid)["ratio"])
        ext[m] = vals
    stable = all(np.all(np.isfinite(v)) and 0.5 < v[0] / v[1] < 2.0 for v in ext.values())
    ok = worst_rate >= 0.8 * s and worst_exact <= 1e-8 and stable
    assert criterion(5, ok, f"worst rate {worst_rate:.3f} (need {0.8 * s}); exact error {worst_exact:.2g}; "
                            f"extension ratios {', '.join(f'm={m}: {v[0]:.3f}->{v[1]:.3f}' for m, v in ext.items())}")


def test_criterion_06_algebraic_identities(criterion):
    worst_alg = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        bg = G.unit_square(1 / 16).boundary_grid(1 / 16)
        for m in (1, 2, 3):
            fd = SP.WhitneyArray.random(bg, m, rng)
            X = rng.uniform(-1, 2, (20, 2))
            Y, Z = rng.integers(0, len(bg), 20), rng.integers(0, len(bg), 20)
            for al in SP.multi_indices(2, m - 1):
                lhs = SP.taylor_polynomial(fd, al, X, Y) - SP.taylor_polynomial(fd, al, X, Z)
                rhs = 0.0
                for be in SP.multi_indices(2, m - 1 - al.order):
                    rhs = rhs + SP.taylor_remainder(fd, al + be, Y, Z) * be.power(X - bg.points[Y]) / be.factorial
                worst_alg = max(worst_alg, float(np.max(np.abs(lhs - rhs))))
                R = SP.taylor_remainder(fd, al, Y, Z)
                worst_alg = max(worst_alg, float(np.max(np.abs(
                    R - (fd[al][Y] - SP.taylor_polynomial(fd, al, bg.points[Y], Z))))))
    phi = lambda xp: 0.1 * np.sin(2 * pi * xp[..., 0])
    dphi = lambda xp: (0.2 * pi * np.cos(2 * pi * xp[..., 0]))[:, None]
    worst_int = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        V = SP.TrigField.random(2, rng)
        Xp, Yp = rng.uniform(0, 1, (8, 1)), rng.uniform(0, 1, (8, 1))
        for m in (2, 3):
            for al in SP.multi_indices(2, m - 2):
                d = SP.graph_remainder(V, phi, al, m, Xp, Yp)
                q = SP.remainder_integral_form(V, phi, dphi, al, m, Xp, Yp)
                worst_int = max(worst_int, float(np.max(np.abs(q - d) / np.maximum(np.abs(d), 1e-3))))
    ok = worst_alg <= 1e-10 and worst_int <= 1e-2
    assert criterion(6, ok, f"algebraic {worst_alg:.2g}; integral form rel {worst_int:.2g}")


def test_criterion_07_hardy_constant(criterion):
    t0 = time.time()
    rows = SP.hardy_bump_study(list(np.round(np.arange(1, 10) / 10, 1)), p=2.0, count=50, rng=0)
    st = [r["statistic"] for r in rows]
    band = max(st) / min(st)
    ok = band < 3.0
    assert criterion(7, ok, f"s * max ratio in [{min(st):.3f}, {max(st):.3f}] (band {band:.3f}); "
                            f"{time.time() - t0:.1f} s")


def test_criterion_08_well_posedness(criterion):
    h = 1 / 16
    zero = S.DirichletProblem(G.unit_square(h), S.CoefficientField.laplacian(), 1)
    U0, _ = S.solve_dirichlet(zero, None, h)
    zmax = float(np.max(np.abs(U0)))
    F = lambda X: 2 * pi ** 2 * np.sin(pi * X[:, 0]) * np.sin(pi * X[:, 1])
    errs = []
    for N in (16, 32, 64):
        W, form, _ = S.solve_homogeneous(S.DirichletProblem(G.unit_square(1 / N), S.CoefficientField.laplacian(),
                                                            1, F=F), 1 / N)
        P = form.grid.points()
        errs.append(float(np.max(np.abs(W - np.sin(pi * P[:, 0]) * np.sin(pi * P[:, 1])))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    T = SP.TrigField.random(2, np.random.default_rng(1))
    bg = G.unit_square(1 / 256).boundary_grid(1 / 256)
    ps = [SP.NormParams.from_s(p, s) for p in (1.5, 2, 4) for s in (0.25, 0.5, 0.75)]
    ratios = []
    for N in (16, 32, 64):
        prob = S.DirichletProblem(G.unit_square(1 / N), S.CoefficientField.laplacian(), 1,
                                  F=lambda X: np.sin(2 * X[:, 0] + X[:, 1]), data=T, bgrid=bg)
        _, d = S.solve_dirichlet(prob, None, 1 / N, norm_params=ps)
        ratios.append([r["ratio"] for r in d["norms"]])
    ratios = np.array(ratios)
    drift = float(np.max(ratios.max(0) / ratios.min(0)))
    ok = zmax <= 1e-8 and np.all(rates > 1.8) and drift < 2.0
    assert criterion(8, ok, f"zero data {zmax:.2g}; rates {', '.join(f'{r:.2f}' for r in rates)}; "
                            f"max drift {drift:.3f}")


def test_criterion_09_frozen_coefficients(criterion):
    h = 1 / 32
    F = lambda X: np.exp(X[:, 0]) * np.cos(3 * X[:, 1])
    res = {a: S.frozen_coefficient_iteration(S.DirichletProblem(G.unit_square(h), S.oscillating_coefficient(a),
                                                                1, F=F), h)
           for a in (0.0, 0.05, 0.2, 0.5)}
    c = res[0.0]
    one_step = float(np.max(np.abs(c.iterates[1] - c.direct)) / np.max(np.abs(c.direct)))
    qs = [res[a].q for a in sorted(res)]
    monotone = all(x < y for x, y in zip(qs, qs[1:]))
    err = res[0.05].error_vs_direct
    ok = one_step < 1e-10 and monotone and err <= 1e-6
    assert criterion(9, ok, f"one-step error {one_step:.2g}; q = [{', '.join(f'{q:.3g}' for q in qs)}]; "
                            f"amplitude 0.05 vs direct {err:.2g}")


def test_criterion_10_lemma_quadrature(criterion):
    bands = {}
    for cfg in ((1, 1.0, 0.5), (2, 0.5, 1.0), (3, 1.0, 1.0)):
        bands[cfg] = K.lemma22_ratio_grid(*cfg, decades=3)["band"]
    ok = all(b < 5.0 for b in bands.values())
    assert criterion(10, ok, ", ".join(f"{c}: band {b:.3f}" for c, b in bands.items()))
