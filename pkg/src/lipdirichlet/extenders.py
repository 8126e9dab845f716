"""Extension and transport operators: Gagliardo's average, the flattening map,
the Whitney-array extension into a domain, traces and normal data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .errors import (CapabilityError, DomainError, KernelParameterError, MapParameterError,
                     ResolutionError)
from .geometry import (RegularizedDistance, _smoothstep, bmo_seminorm, as_samples,
                       SampleSet)
from .spaces import (BoundaryFunction, GridFunction, MultiIndex, NormParams, WhitneyArray,
                     multi_indices, multinomial, unit_index, weighted_sobolev_norm_V,
                     top_order_seminorm, higher_besov_norm)

# ---------------------------------------------------------------------------
# smoothing kernel


def _bump(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    with np.errstate(divide="ignore", over="ignore"):
        v = np.exp(-1.0 / np.where(inside, 1.0 - u * u, 1.0))
    return np.where(inside, v, 0.0)


@lru_cache(maxsize=None)
def _bump_numerators(k):
    """Polynomials N_j with d^j/du^j exp(-1/(1-u^2)) = N_j(u) / (1-u^2)^{2j} exp(...)."""
    one_minus = Polynomial([1.0, 0.0, -1.0])
    u = Polynomial([0.0, 1.0])
    out = [Polynomial([1.0])]
    for j in range(k):
        N = out[-1]
        out.append(N.deriv() * one_minus ** 2 + 4 * j * u * N * one_minus - 2 * u * N)
    return out


def bump_derivative(j, u):
    """j-th derivative of exp(-1/(1-u^2)) on (-1, 1), zero outside."""
    u = np.asarray(u, dtype=float)
    N = _bump_numerators(j)[j]
    inside = np.abs(u) < 1
    den = np.where(inside, 1.0 - u * u, 1.0) ** (2 * j)
    return np.where(inside, N(u) / den * _bump(u), 0.0)


class SmoothingKernel:
    """zeta(t) = c exp(-1/(1-|t|^2)) on the unit ball of R^{n-1}, with int zeta = 1.

    ``nodes``/``weights`` are a Gauss rule on the ball already multiplied by
    zeta (the weights sum to 1 up to rounding).
    """

    def __init__(self, n=2, order=96):
        if n not in (2, 3):
            raise CapabilityError("smoothing kernels are provided for n = 2, 3")
        self.n = n
        self.dim = n - 1
        if self.dim == 1:
            self.raw_mass = 2 * integrate.quad(lambda t: float(_bump(t)), 0, 1)[0]
            x, w = np.polynomial.legendre.leggauss(order)
            self.nodes = x[:, None]
            self.weights = w * _bump(x) / self.raw_mass
        else:
            self.raw_mass = 2 * np.pi * integrate.quad(lambda r: r * float(_bump(r)), 0, 1)[0]
            r, wr = np.polynomial.legendre.leggauss(order // 2)
            r, wr = 0.5 * (r + 1), 0.5 * wr
            th = 2 * np.pi * np.arange(order) / order
            R, T = np.meshgrid(r, th, indexing="ij")
            W = (wr * r * _bump(r))[:, None] * np.full(order, 2 * np.pi / order)[None, :]
            self.nodes = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
            self.weights = W.ravel() / self.raw_mass
        self.c = 1.0 / self.raw_mass

    def __call__(self, t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        r = np.sqrt(np.sum(t * t, axis=-1))
        return self.c * _bump(r)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def first_moment(self):
        return self.weights @ self.nodes

    @property
    def abs_moment(self) -> float:
        """int zeta(t) |t| dt; bounds |d_n T phi| by this times Lip(phi)."""
        # adaptive quadrature: |t| has a kink that the Gauss rule resolves poorly
        if self.dim == 1:
            return 2 * integrate.quad(lambda t: t * float(_bump(t)), 0, 1)[0] / self.raw_mass
        return 2 * np.pi * integrate.quad(lambda r: r * r * float(_bump(r)), 0, 1)[0] / self.raw_mass


# ---------------------------------------------------------------------------
# Gagliardo extension


def _as_callable(phi):
    """Callable x' -> phi(x') from a callable or a graph BoundaryFunction."""
    if callable(phi) and not isinstance(phi, BoundaryFunction):
        return phi
    if isinstance(phi, BoundaryFunction):
        dom = phi.bgrid.domain
        if dom is None or getattr(dom, "kind", "") != "graph":
            raise DomainError("Gagliardo extension needs boundary data over an X' grid")
        vals = np.asarray(phi.values, dtype=float)
        if vals.size != dom.phi.size:
            raise ResolutionError("boundary data must live on the domain's X' grid")
        arr = vals.reshape(dom.phi.shape)
        return lambda xp: dom._interp(arr, np.asarray(xp, dtype=float).reshape(-1, dom.n - 1))
    raise DomainError("phi must be callable or a BoundaryFunction")


def _split(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(x[:, -1] <= 0):
        raise DomainError("Gagliardo extension is evaluated at x_n > 0 only")
    return x[:, :-1], x[:, -1]


def _d_kernel_terms(alpha):
    """Terms (c, a, j, k): d^alpha [x2^{-1} zeta(u)] = sum c x2^{-a} u^j zeta^{(k)}(u),
    u = (y - x1) / x2, for n = 2."""
    terms = {(1, 0, 0): 1.0}
    for _ in range(alpha[0]):
        new = {}
        for (a, j, k), c in terms.items():
            if j:
                new[(a + 1, j - 1, k)] = new.get((a + 1, j - 1, k), 0.0) - c * j
            new[(a + 1, j, k + 1)] = new.get((a + 1, j, k + 1), 0.0) - c
        terms = new
    for _ in range(alpha[1]):
        new = {}
        for (a, j, k), c in terms.items():
            new[(a + 1, j, k)] = new.get((a + 1, j, k), 0.0) - c * (a + j)
            new[(a + 1, j + 1, k + 1)] = new.get((a + 1, j + 1, k + 1), 0.0) - c
        terms = new
    return [(c, a, j, k) for (a, j, k), c in terms.items() if c != 0]


def gagliardo_extend(phi, kernel: Optional[SmoothingKernel] = None, eval_points=None,
                     alpha=None, order=192):
    """(T phi)(x', x_n) = int zeta(t) phi(x' + x_n t) dt, or its derivative d^alpha.

    Derivatives (n = 2) differentiate the kernel x_n^{-1} zeta((y - x')/x_n)
    exactly, so phi only needs to be integrable (Lipschitz phi with jumping
    gradient is fine). In n = 3 only values are provided.
    """
    xp, xn = _split(eval_points)
    n = xp.shape[1] + 1
    kernel = kernel or SmoothingKernel(n)
    f = _as_callable(phi)
    if alpha is None or sum(alpha) == 0:
        t = kernel.nodes
        pts = xp[:, None, :] + xn[:, None, None] * t[None, :, :]
        vals = np.asarray(f(pts.reshape(-1, n - 1)[:, 0] if n == 2 else pts.reshape(-1, n - 1)))
        return vals.reshape(len(xn), -1) @ kernel.weights
    if n != 2:
        raise CapabilityError("derivatives of the Gagliardo extension are coded for n = 2")
    x, w = np.polynomial.legendre.leggauss(order)
    out = np.zeros(len(xn))
    vals = np.asarray(f((xp[:, 0:1] + xn[:, None] * x[None, :]).ravel())).reshape(len(xn), -1)
    for c, a, j, k in _d_kernel_terms(tuple(alpha)):
        g = (x ** j) * bump_derivative(k, x) * kernel.c
        # dy = x2 du
        out += c * xn ** (1 - a) * (vals @ (w * g))
    return out


def _grid2d(xlim, ylim, nx, ny, geometric=True):
    xs = np.linspace(xlim[0], xlim[1], nx)
    ys = np.geomspace(ylim[0], ylim[1], ny) if geometric else np.linspace(ylim[0], ylim[1], ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def gradient_bmo(dphi, lo, hi, count=4000, geometric_about=None):
    """[phi']_BMO on [lo, hi] from samples of phi' (1-D)."""
    if geometric_about is not None:
        # dense near the singular point, symmetric about it
        c = geometric_about
        left = c - np.geomspace(1e-9, c - lo, count // 2)[::-1] if c > lo else np.zeros(0)
        right = c + np.geomspace(1e-9, hi - c, count // 2)
        edges = np.unique(np.concatenate([[lo], left, [c], right, [hi]]))
        x = 0.5 * (edges[1:] + edges[:-1])
        w = np.diff(edges)
        smp = SampleSet(x[:, None], np.asarray(dphi(x)), w, float(w.min()))
    else:
        x = np.linspace(lo, hi, count + 1)
        xm = 0.5 * (x[1:] + x[:-1])
        smp = SampleSet(xm[:, None], np.asarray(dphi(xm)), np.diff(x), float(np.diff(x).min()))
    return bmo_seminorm(smp, max_centres=800)


def gagliardo_derivative_bounds(phi, dphi, order=2, kernel=None, xlim=(-0.5, 0.5),
                                ylim=(1e-4, 0.5), nx=161, ny=60, bmo=None):
    """max |d^alpha T phi| x_n^{|alpha|-1} / [grad phi]_BMO over a grid, all |alpha| = order.

    Also returns the ratio of Lemma-type |T phi - phi| / (x_n [grad phi]_BMO) and the
    BMO ratio [grad T phi]_BMO / [grad phi]_BMO on the same grid.
    """
    kernel = kernel or SmoothingKernel(2)
    pts = _grid2d(xlim, ylim, nx, ny)
    if bmo is None:
        bmo = gradient_bmo(dphi, xlim[0] - ylim[1], xlim[1] + ylim[1], geometric_about=0.0)
    rep = {"bmo_grad_phi": float(bmo)}
    if bmo <= 1e-12:
        rep.update(exact=True, note="exact: derivative vanishes")
        return rep
    worst = 0.0
    for al in multi_indices(2, order, order):
        d = gagliardo_extend(phi, kernel, pts, alpha=tuple(al))
        worst = max(worst, float(np.max(np.abs(d) * pts[:, 1] ** (order - 1))))
    rep["derivative_ratio"] = worst / bmo
    T0 = gagliardo_extend(phi, kernel, pts)
    rep["boundary_ratio"] = float(np.max(np.abs(T0 - phi(pts[:, 0])) / pts[:, 1])) / bmo
    g = np.stack([gagliardo_extend(phi, kernel, pts, alpha=(1, 0)),
                  gagliardo_extend(phi, kernel, pts, alpha=(0, 1))], axis=1)
    # BMO of the gradient field over the sampled region (geometric cells in x_n)
    xs = np.linspace(xlim[0], xlim[1], nx)
    ys = np.geomspace(ylim[0], ylim[1], ny)
    wx = np.gradient(xs)
    wy = np.gradient(ys)
    W = np.outer(wx, wy).ravel()
    smp = SampleSet(pts, g, W, float(min(wx.min(), wy.min())))
    rep["bmo_ratio"] = bmo_seminorm(smp, max_centres=600) / bmo
    rep["exact"] = False
    return rep


# ---------------------------------------------------------------------------
# flattening map


class FlatteningMap:
    """lambda(x', x_n) = (x', C_eff x_n + (T phi)(x', x_n)) with C_eff = C max(M, 1).

    phi is the graph function of a LipschitzGraphDomain (or a callable with
    Lipschitz constant ``lip``). The inverse is found by bisection in x_n.
    """

    def __init__(self, domain=None, C=10.0, phi=None, lip=None, kernel=None):
        if domain is not None:
            self.domain = domain
            self.phi = lambda xp: domain.phi_at(np.asarray(xp).reshape(-1, domain.n - 1))
            self.n = domain.n
            M = domain.lip_constant if lip is None else lip
        else:
            if phi is None or lip is None:
                raise MapParameterError("give a graph domain or (phi, lip)")
            self.domain = None
            self.phi = phi
            self.n = 2
            M = float(lip)
        self.M = float(M)
        self.C = float(C)
        self.C_eff = self.C * max(self.M, 1.0)
        self.kernel = kernel or SmoothingKernel(self.n)
        if self.C_eff <= self.M * self.kernel.abs_moment:
            raise MapParameterError(
                f"C = {C} too small: C max(M,1) must exceed M int zeta|t| = "
                f"{self.M * self.kernel.abs_moment:.3g}")

    def _T(self, x, alpha=None):
        phi = self.phi
        if self.n == 2:
            f = lambda t: phi(np.asarray(t).reshape(-1, 1))
        else:
            f = phi
        return gagliardo_extend(f, self.kernel, x, alpha=alpha)

    def flatten(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if np.any(x[:, -1] <= 0):
            raise DomainError("flatten expects x_n > 0")
        X = x.copy()
        X[:, -1] = self.C_eff * x[:, -1] + self._T(x)
        return X

    __call__ = flatten

    def unflatten(self, X, tol=1e-12, max_iter=200):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        xp = X[:, :-1]
        ph = np.asarray(self.phi(xp)).reshape(-1)
        gap = X[:, -1] - ph
        if np.any(gap <= 0):
            raise DomainError("unflatten expects points above the graph")
        slope_lo = self.C_eff - self.M * self.kernel.abs_moment
        lo = np.zeros(len(X))
        hi = gap / slope_lo * 1.0001
        y = X.copy()
        y[:, -1] = hi
        if np.any(self.flatten(y)[:, -1] < X[:, -1]):
            raise MapParameterError("bisection failed to bracket the preimage; increase C")
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            y[:, -1] = np.maximum(mid, 1e-300)
            above = self.flatten(y)[:, -1] > X[:, -1]
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.all(hi - lo <= tol * np.maximum(hi, 1e-300)):
                break
        y[:, -1] = 0.5 * (lo + hi)
        return y

    def jacobian(self, x):
        """lambda'(x), shape (M, n, n) (n = 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.n != 2:
            raise CapabilityError("Jacobian is coded for n = 2")
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 0] = 1.0
        J[:, 1, 0] = self._T(x, (1, 0))
        J[:, 1, 1] = self.C_eff + self._T(x, (0, 1))
        return J

    def det_lower_bound(self):
        return self.C_eff - self.M * self.kernel.abs_moment

    def inverse_jacobian(self, X):
        return np.linalg.inv(self.jacobian(self.unflatten(X)))


def flatten_derivative_bounds(fmap: FlatteningMap, dphi, X, bmo=None, rel_step=1e-3):
    """max ||d kappa'(X)|| (X_n - phi(X')) / [grad phi]_BMO over points X (|alpha| = 1)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if bmo is None:
        lo, hi = float(X[:, 0].min()) - 1, float(X[:, 0].max()) + 1
        bmo = gradient_bmo(dphi, lo, hi, geometric_about=0.0)
    if bmo <= 1e-12:
        return {"exact": True, "note": "exact: derivative vanishes", "bmo_grad_phi": bmo}
    gap = X[:, 1] - np.asarray(fmap.phi(X[:, :1])).reshape(-1)
    worst = 0.0
    for d in range(2):
        e = np.zeros(2)
        e[d] = 1.0
        st = rel_step * gap
        Kp = fmap.inverse_jacobian(X + st[:, None] * e)
        Km = fmap.inverse_jacobian(X - st[:, None] * e)
        D = (Kp - Km) / (2 * st[:, None, None])
        worst = max(worst, float(np.max(np.linalg.norm(D, axis=(1, 2)) * gap)))
    return {"exact": False, "ratio": worst / bmo, "bmo_grad_phi": float(bmo)}


def height_band(fmap: FlatteningMap, x):
    """(X_n - phi(X')) / x_n over points x in the half-space: (min, max)."""
    X = fmap.flatten(x)
    gap = X[:, -1] - np.asarray(fmap.phi(X[:, :-1])).reshape(-1)
    r = gap / np.atleast_2d(x)[:, -1]
    return float(r.min()), float(r.max())


def change_of_variables_norm_check(u: Callable, fmap: FlatteningMap, params: NormParams,
                                   half_grid, graph_grid):
    """||u o kappa||_V(G) / ||u||_V(R^n_+) with u sampled on both grids.

    ``half_grid`` is a CellGrid in the half-space (x_n > 0) and
    ``graph_grid`` a CellGrid over the graph domain of the map.
    """
    from .geometry import LipschitzGraphDomain  # noqa: F401

    class _Half:
        n = fmap.n
        kind = "halfspace"

        @staticmethod
        def distance(P):
            return np.asarray(P)[:, -1]

    Ph = half_grid.all_points()
    uh = np.asarray(u(Ph)).reshape(half_grid.shape)
    Pg = graph_grid.all_points()
    ug = np.zeros(len(Pg))
    m = graph_grid.mask.ravel()
    ug[m] = np.asarray(u(fmap.unflatten(Pg[m])))
    ug = ug.reshape(graph_grid.shape)
    U_half = GridFunction(_Half, half_grid, uh, order=params.m)
    U_graph = GridFunction(fmap.domain, graph_grid, ug, order=params.m)
    a = weighted_sobolev_norm_V(U_half, params)
    b = weighted_sobolev_norm_V(U_graph, params)
    if a == 0 and b == 0:
        return {"ratio": None, "note": "0/0: skip"}
    return {"ratio": b / a, "half": a, "graph": b}


# ---------------------------------------------------------------------------
# extension of Whitney arrays


def eta_profile(z):
    """eta = 1 on [0, 1], smooth decay to 0 at 2, positive on [0, 2)."""
    S, dS = _smoothstep(2.0 - np.asarray(z, dtype=float))
    return S, -dS


class BoundaryExtension:
    """E fdot(X) = int K(X,Y) P(X,Y) d sigma_Y / int K(X,Y) d sigma_Y.

    K(X,Y) = eta(|X - Y| / (kappa rho_reg(X))), additionally set to zero when
    |X - Y| >= 2 rho(X). P(X,Y) is the Taylor polynomial of fdot at Y. The
    kernel scale kappa is calibrated from the band of rho_reg / rho.
    """

    def __init__(self, domain, bgrid, reg: Optional[RegularizedDistance] = None,
                 kappa=None, min_side=None, height=None, mu=1.25, focus=None):
        self.domain = domain
        self.bgrid = bgrid
        self.n = bgrid.n
        if reg is None:
            if min_side is None:
                raise KernelParameterError("give a RegularizedDistance or min_side")
            reg = RegularizedDistance(domain, min_side, mu=mu, height=height, focus=focus)
        self.reg = reg
        self._kappa = kappa
        P = bgrid.points
        self._shifts = [np.zeros(self.n)]
        if bgrid.period is not None:
            k = len(bgrid.period)
            grid = np.array(np.meshgrid(*[[-1, 0, 1]] * k, indexing="ij")).reshape(k, -1).T
            self._shifts = [np.concatenate([g * bgrid.period, np.zeros(self.n - k)]) for g in grid]
        self._copy_pts = np.concatenate([P + s for s in self._shifts])
        self._copy_idx = np.tile(np.arange(len(P)), len(self._shifts))
        self._tree = cKDTree(self._copy_pts)

    def calibrate(self, X, rho=None):
        """kappa = 0.98 / c2 so that 2 kappa rho_reg <= 2 rho; requires kappa > 1/(2 c1)."""
        rho = self.domain.distance(X) if rho is None else rho
        val, _ = self.reg.evaluate(X, grad=False, rho=rho)
        c1 = float(np.min(val / rho))
        c2 = float(np.max(val / rho))
        kappa = 0.98 / c2
        if kappa <= 0.5 / c1:
            raise KernelParameterError(
                f"rho_reg band [{c1:.3g}, {c2:.3g}] too wide for a valid kernel scale")
        self._kappa = kappa
        self.band = (c1, c2)
        return kappa

    def _pairs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = X.copy()
        dom = self.domain
        if getattr(dom, "periodic", False) and getattr(dom, "period", None) is not None:
            k = len(dom.period)
            q[:, :k] = dom.origin + np.mod(q[:, :k] - dom.origin, dom.period)
        rho = dom.distance(q)
        if np.any(rho <= 0):
            raise DomainError("extension is evaluated at interior points only")
        if self._kappa is None:
            self.calibrate(q, rho)
        val, grad = self.reg.evaluate(q, grad=True, rho=rho)
        radius = np.minimum(2.0 * self._kappa * val, 2.0 * rho)
        lists = self._tree.query_ball_point(q, radius)
        counts = np.array([len(L) for L in lists])
        ip = np.repeat(np.arange(len(q)), counts)
        jc = np.concatenate([np.asarray(L, dtype=int) for L in lists]) if counts.sum() else np.zeros(0, int)
        return q, rho, val, grad, ip, jc

    def apply(self, fdot: WhitneyArray, X, derivatives=True, return_report=False):
        """Values (and first derivatives, shape (M, n)) of E fdot at points X."""
        if fdot.bgrid is not self.bgrid and len(fdot.bgrid) != len(self.bgrid):
            raise ResolutionError("Whitney array lives on a different boundary grid")
        q, rho, rr, grr, ip, jc = self._pairs(X)
        n = self.n
        j = self._copy_idx[jc]
        Yc = self._copy_pts[jc]
        disp = q[ip] - Yc
        dist = np.sqrt(np.sum(disp * disp, axis=1))
        scale = self._kappa * rr[ip]
        z = dist / scale
        eta, deta = eta_profile(z)
        eta = np.where(dist < 2.0 * rho[ip], eta, 0.0)
        deta = np.where(dist < 2.0 * rho[ip], deta, 0.0)
        w = self.bgrid.weights[j]
        Kw = eta * w
        Z = np.bincount(ip, Kw, minlength=len(q))
        if np.any(Z <= 0):
            bad = int(np.sum(Z <= 0))
            raise KernelParameterError(f"kernel normalisation vanishes at {bad} point(s)")
        m = fdot.m

        def taylor(alpha):
            out = np.zeros(len(ip), dtype=np.result_type(*[v for _, v in fdot.items()], float))
            for be in multi_indices(n, m - 1 - alpha.order):
                out = out + fdot[alpha + be][j] * be.power(disp) / be.factorial
            return out

        zero = MultiIndex((0,) * n)
        P0 = taylor(zero)
        N = np.bincount(ip, Kw * P0.real, minlength=len(q))
        if np.iscomplexobj(P0):
            N = N + 1j * np.bincount(ip, Kw * P0.imag, minlength=len(q))
        val = N / Z
        out = [val]
        if derivatives:
            grads = np.zeros((len(q), n), dtype=val.dtype)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(dist[:, None] > 0, disp / dist[:, None], 0.0)
            for k in range(n):
                # d z / d X_k = unit_k / scale - z * d rho_reg_k / rho_reg
                dz = unit[:, k] / scale - z * grr[ip, k] / rr[ip]
                dK = deta * dz * w
                Pk = taylor(unit_index(n, k)) if m >= 2 else np.zeros_like(P0)
                dZ = np.bincount(ip, dK, minlength=len(q))

                def bc(v):
                    r = np.bincount(ip, v.real, minlength=len(q))
                    if np.iscomplexobj(v):
                        r = r + 1j * np.bincount(ip, v.imag, minlength=len(q))
                    return r

                dN = bc(dK * P0) + bc(Kw * Pk)
                grads[:, k] = (dN - val * dZ) / Z
            out.append(grads)
        if return_report:
            rep = {"kappa": self._kappa, "pairs": int(len(ip)),
                   "support_violations": int(np.sum((eta > 0) & (dist >= 2 * rho[ip]))),
                   "normalisation_min": float(np.min(Z / rho ** (n - 1))),
                   "normalisation_max": float(np.max(Z / rho ** (n - 1)))}
            out.append(rep)
        return tuple(out) if len(out) > 1 else out[0]


def boundary_extension_E(fdot: WhitneyArray, domain, params: Optional[NormParams] = None,
                         grid=None, extension: Optional[BoundaryExtension] = None,
                         min_side=None):
    """E fdot sampled on a cell grid as a GridFunction with exact first derivatives."""
    if grid is None:
        grid = domain.volume_grid()
    if extension is None:
        if min_side is None:
            min_side = _default_min_side(domain, grid)
        height = _grid_height(domain, grid)
        extension = BoundaryExtension(domain, fdot.bgrid, min_side=min_side, height=height,
                                      focus=grid.points())
    pts = grid.points()
    val, grad = extension.apply(fdot, pts)
    full = np.zeros(grid.shape, dtype=val.dtype)
    full[grid.mask] = val
    ders = {}
    for k in range(domain.n):
        g = np.zeros(grid.shape, dtype=val.dtype)
        g[grid.mask] = grad[:, k]
        ders[tuple(unit_index(domain.n, k))] = g
    order = max(fdot.m, 1) if params is None else max(params.m, 1)
    return GridFunction(domain, grid, full, order=order, derivatives=ders)


def _default_min_side(domain, grid):
    rho = domain.distance(grid.points())
    return 2.0 ** math.floor(math.log2(float(rho.min()) / 4.0))


def _grid_height(domain, grid):
    if getattr(domain, "kind", "") != "graph":
        return None
    top = grid.axes[-1][-1] + 0.5 * grid.widths[-1][-1]
    return float(top - float(np.min(domain.phi))) * 1.2


def extension_norm_ratio(fdot, domain, params: NormParams, grid=None, extension=None):
    """(sum_{|gamma| = m} int |d^gamma E fdot|^p rho^{p(1-s)-1})^{1/p} / ||fdot||."""
    U = boundary_extension_E(fdot, domain, params, grid, extension)
    lhs = top_order_seminorm(U, params)
    rhs = higher_besov_norm(fdot, params.p, params.s)
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs}


# ---------------------------------------------------------------------------
# traces


_EXTRAP_D = np.array([1.5, 2.5, 3.5])
_EXTRAP_W = np.array([4.375, -5.25, 1.875])


def _interpolator(grid, values):
    axes = [np.asarray(a) for a in grid.axes]
    v = np.where(grid.mask if values.ndim == grid.ndim else grid.mask[..., None], values, np.nan)
    for k in range(grid.ndim):
        if grid.periodic[k]:
            L = grid.period[k]
            axes[k] = np.concatenate([[axes[k][-1] - L], axes[k], [axes[k][0] + L]])
            v = np.concatenate([np.take(v, [-1], axis=k), v, np.take(v, [0], axis=k)], axis=k)
    return RegularGridInterpolator(axes, v, method="linear", bounds_error=False,
                                   fill_value=np.nan)


def _wrap(grid, pts):
    pts = pts.copy()
    for k in range(grid.ndim):
        if grid.periodic[k]:
            lo = grid.axes[k][0] - 0.5 * grid.widths[k][0]
            pts[..., k] = lo + np.mod(pts[..., k] - lo, grid.period[k])
    return pts


def trace_values(grid, values, bgrid, spacing=None):
    """Boundary values by quadratic extrapolation from 3 inward-normal samples.

    Samples sit at distances 1.5, 2.5, 3.5 grid steps along the inward
    normal and are read by multilinear interpolation; nodes whose samples
    leave the resolved region get NaN.
    """
    h = grid.h if spacing is None else float(spacing)
    interp = _interpolator(grid, np.asarray(values))
    P = bgrid.points
    nu = bgrid.normals
    acc = 0.0
    for d, w in zip(_EXTRAP_D, _EXTRAP_W):
        q = _wrap(grid, P - d * h * nu)
        acc = acc + w * interp(q)
    return acc


def trace(U: GridFunction, bgrid, alpha=None) -> BoundaryFunction:
    vals = U.values if alpha is None else U.derivative(alpha)
    return BoundaryFunction(bgrid, trace_values(U.grid, vals, bgrid))


def higher_trace(U: GridFunction, m, bgrid) -> WhitneyArray:
    """{Tr d^alpha U : |alpha| <= m - 1}; nodes that cannot be resolved carry NaN."""
    if m - 1 > U.order:
        raise ResolutionError(f"trace of order {m - 1} needs derivatives of that order")
    comp = {}
    for al in multi_indices(U.grid.ndim, m - 1):
        comp[tuple(al)] = trace_values(U.grid, U.derivative(al), bgrid)
    return WhitneyArray(bgrid, m, comp)


def round_trip_error(fdot: WhitneyArray, rec: WhitneyArray, p):
    """max over alpha of the weighted L_p error over resolved nodes, and the coverage."""
    ok = np.ones(len(fdot.bgrid), dtype=bool)
    for al in fdot.indices:
        ok &= np.isfinite(rec[al])
    if not ok.any():
        raise ResolutionError("no boundary node could be resolved")
    w = fdot.bgrid.weights
    errs, nrms = [], []
    for al in fdot.indices:
        d = np.abs(rec[al][ok] - fdot[al][ok])
        errs.append(float(np.sum(d ** p * w[ok]) ** (1 / p)))
        nrms.append(float(np.sum(np.abs(fdot[al][ok]) ** p * w[ok]) ** (1 / p)))
    err = max(errs)
    # components that vanish identically are measured against the largest one
    floor = max(max(nrms) * 1e-12, 1e-300)
    rel = max(e / max(nv, floor) for e, nv in zip(errs, nrms))
    return {"error": err, "relative": rel, "coverage": float(w[ok].sum() / w.sum())}


# ---------------------------------------------------------------------------
# normal data


def normal_data_map(fdot: WhitneyArray, normals=None):
    """g_k = sum_{|alpha| = k} (k!/alpha!) nu^alpha f_alpha (outward normal), k < m.

    With f_alpha the traces of real partials, g_k is the k-th outward normal
    derivative of the extended function.
    """
    nu = fdot.bgrid.normals if normals is None else normals
    n = fdot.n
    out = []
    for k in range(fdot.m):
        g = 0.0
        for al in multi_indices(n, k, k):
            g = g + multinomial(al) * al.power(nu) * fdot[al]
        out.append(np.asarray(g) * np.ones(len(fdot.bgrid)))
    return out


def reconstruct_from_normal_data(gs, bgrid, m):
    """Rebuild {f_alpha} from normal data and the compatibility relations.

    Level by level: the f_alpha with |alpha| = k solve, in least squares,
    g_k = sum (k!/alpha!) nu^alpha f_alpha together with
    nu_j f_{beta+e_l} - nu_l f_{beta+e_j} = (nu_j d_l - nu_l d_j) f_beta for
    |beta| = k - 1, whose right side uses tangential differences of the
    previous level.
    """
    n = bgrid.n
    nu = bgrid.normals
    comp = {tuple(MultiIndex((0,) * n)): np.asarray(gs[0], dtype=float)}
    for k in range(1, m):
        level = multi_indices(n, k, k)
        pos = {tuple(a): i for i, a in enumerate(level)}
        rows = []
        rhs = []
        row = np.zeros((len(bgrid), len(level)))
        for i, al in enumerate(level):
            row[:, i] = multinomial(al) * al.power(nu)
        rows.append(row)
        rhs.append(np.asarray(gs[k], dtype=float))
        for be in multi_indices(n, k - 1, k - 1):
            tg = bgrid.tangential_gradient(comp[tuple(be)])
            for j in range(n):
                for l in range(j + 1, n):
                    r = np.zeros((len(bgrid), len(level)))
                    r[:, pos[tuple(be + unit_index(n, l))]] += nu[:, j]
                    r[:, pos[tuple(be + unit_index(n, j))]] -= nu[:, l]
                    rows.append(r)
                    rhs.append(nu[:, j] * tg[:, l] - nu[:, l] * tg[:, j])
        A = np.stack(rows, axis=1)  # (N, eqs, unknowns)
        b = np.stack(rhs, axis=1)
        sol = np.stack([np.linalg.lstsq(A[i], b[i], rcond=None)[0] for i in range(len(bgrid))])
        for al, i in pos.items():
            comp[al] = sol[:, i]
    return WhitneyArray(bgrid, m, comp)


def injectivity_residual(fdot: WhitneyArray):
    """Relative L_2 difference between fdot and its reconstruction from normal data."""
    rec = reconstruct_from_normal_data(normal_data_map(fdot), fdot.bgrid, fdot.m)
    w = fdot.bgrid.weights
    num = sum(float(np.sum(np.abs(rec[a] - fdot[a]) ** 2 * w)) for a in fdot.indices)
    den = sum(float(np.sum(np.abs(fdot[a]) ** 2 * w)) for a in fdot.indices)
    return {"residual": math.sqrt(num / max(den, 1e-300)), "absolute": math.sqrt(num),
            "reconstruction": rec}
