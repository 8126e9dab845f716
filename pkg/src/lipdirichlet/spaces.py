"""Norm parameters, sampled functions, weighted Sobolev and Besov norms.

Conventions: ``GridFunction.derivative(alpha)`` returns the real partial
derivative of order alpha. The operators D^alpha = (-i d)^alpha differ from
it by a unimodular factor, which is irrelevant inside every norm here.
Whitney arrays store f_alpha as traces of real partials, so Taylor sums use
the ordinary ``(X - Y)^beta / beta!`` weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from .errors import (CompatibilityError, MultiIndexError, OrderError, ParameterError,
                     ResolutionError)
from .geometry import BoundaryGrid, CellGrid, SampleSet

# ---------------------------------------------------------------------------
# multi-indices


class MultiIndex(tuple):
    """Tuple of nonnegative ints; ``+`` adds componentwise."""

    def __new__(cls, entries):
        entries = tuple(int(e) for e in entries)
        if any(e < 0 for e in entries):
            raise MultiIndexError(f"negative entry in multi-index {entries}")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        return int(sum(self))

    @property
    def factorial(self) -> int:
        out = 1
        for e in self:
            out *= math.factorial(e)
        return out

    def __add__(self, other):
        if len(other) != len(self):
            raise MultiIndexError("multi-index lengths differ")
        return MultiIndex(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        return MultiIndex(a - b for a, b in zip(self, other))

    def power(self, X):
        """X^alpha for points X of shape (..., n)."""
        X = np.asarray(X)
        out = np.ones(X.shape[:-1], dtype=X.dtype if np.iscomplexobj(X) else float)
        for k, e in enumerate(self):
            if e:
                out = out * X[..., k] ** e
        return out

    def __repr__(self):
        return f"MultiIndex{tuple(self)}"


def unit_index(n, j) -> MultiIndex:
    return MultiIndex(1 if k == j else 0 for k in range(n))


def zero_index(n) -> MultiIndex:
    return MultiIndex((0,) * n)


def multi_indices(n, max_order, min_order=0):
    """All alpha with min_order <= |alpha| <= max_order, graded lexicographic."""
    out = []
    for k in range(int(min_order), int(max_order) + 1):
        level = [MultiIndex(c) for c in itertools.product(range(k, -1, -1), repeat=n)
                 if sum(c) == k]
        out.extend(level)
    return out


def multinomial(alpha) -> int:
    a = MultiIndex(alpha)
    return math.factorial(a.order) // a.factorial


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class NormParams:
    """Integrability p, weight a, smoothness s = 1 - a - 1/p and order m."""

    p: float
    a: float
    m: int = 1

    def __post_init__(self):
        p, a = float(self.p), float(self.a)
        if not (1.0 < p < math.inf):
            raise ParameterError(f"p must lie in (1, inf), got {p}")
        if not (-1.0 / p < a < 1.0 - 1.0 / p):
            raise ParameterError(f"a must lie in (-1/p, 1 - 1/p), got {a}")
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def from_s(cls, p, s, m=1):
        if not (0.0 < s < 1.0):
            raise ParameterError(f"s must lie in (0, 1), got {s}")
        return cls(p, 1.0 - float(s) - 1.0 / float(p), m)

    @property
    def s(self) -> float:
        return 1.0 - self.a - 1.0 / self.p

    @property
    def q(self) -> float:
        """Dual exponent p' = p/(p-1)."""
        return self.p / (self.p - 1.0)


# ---------------------------------------------------------------------------
# finite differences on masked cell grids


def _runs(flags):
    """Start/stop pairs of consecutive True entries."""
    f = np.concatenate([[False], flags, [False]]).astype(np.int8)
    d = np.diff(f)
    return np.nonzero(d == 1)[0], np.nonzero(d == -1)[0]


def _diff_axis(values, mask, coords, axis, period=None):
    """First derivative along one axis, restricted to runs of masked cells.

    Second-order centred differences on nonuniform spacing inside a run,
    second-order one-sided at run ends, first order for runs of length 2.
    Runs spanning a full periodic line wrap around.
    """
    v = np.moveaxis(values, axis, 0)
    mk = np.moveaxis(mask, axis, 0)
    L = v.shape[0]
    vs = v.reshape(L, -1)
    ms = mk.reshape(L, -1)
    out = np.full(vs.shape, np.nan, dtype=np.result_type(vs.dtype, float))
    full = ms.all(axis=0)
    if period is not None and full.any():
        cols = np.nonzero(full)[0]
        ext = np.concatenate([vs[-1:, cols], vs[:, cols], vs[:1, cols]], axis=0)
        c = np.concatenate([[coords[-1] - period], coords, [coords[0] + period]])
        out[:, cols] = np.gradient(ext, c, axis=0)[1:-1]
        todo = np.nonzero(~full)[0]
    else:
        todo = np.arange(vs.shape[1])
    # group columns by identical mask pattern so each pattern is done once
    if len(todo):
        pats = ms[:, todo]
        keys, inv = np.unique(pats.T, axis=0, return_inverse=True)
        inv = np.ravel(inv)
        for g, key in enumerate(keys):
            cols = todo[inv == g]
            starts, stops = _runs(key)
            for a, b in zip(starts, stops):
                seg = vs[a:b, :][:, cols]
                if b - a == 1:
                    out[a, cols] = 0.0
                    continue
                order = 2 if b - a > 2 else 1
                out[a:b, cols] = np.gradient(seg, coords[a:b], axis=0, edge_order=order)
    out = out.reshape(v.shape)
    return np.moveaxis(out, 0, axis)


def _average_power(rho, width, q):
    """Cell average of t^q over [rho - width/2, rho + width/2].

    Cells reaching the boundary with q <= -1 fall back to rho^q.
    """
    lo = np.maximum(rho - 0.5 * width, 0.0)
    hi = rho + 0.5 * width
    span = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(q + 1.0) < 1e-12:
            val = (np.log(hi) - np.log(lo)) / span
        else:
            val = (hi ** (q + 1.0) - lo ** (q + 1.0)) / ((q + 1.0) * span)
    small = width < 1e-9 * np.maximum(rho, 1e-300)
    # t^q is not integrable at 0 for q <= -1: such boundary cells use the midpoint value
    small |= (q <= -1.0) & (lo <= 0.0)
    return np.where(small, rho ** q, val)


class GridFunction:
    """Samples of a (possibly vector valued) function on a masked cell grid.

    ``values`` has shape ``grid.shape`` or ``grid.shape + (l,)``; entries
    outside the mask are ignored. ``order`` bounds the derivatives that may
    be requested. Exact derivatives can be supplied in ``derivatives``
    (keyed by multi-index); the rest are finite differences.
    """

    def __init__(self, domain, grid: CellGrid, values, order=2, derivatives=None):
        values = np.asarray(values)
        if values.shape[: grid.ndim] != grid.shape:
            raise ResolutionError(
                f"sample shape {values.shape} does not match grid {grid.shape}")
        self.domain = domain
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)
        self.order = int(order)
        self._cache: Dict[tuple, np.ndarray] = {}
        for k, v in (derivatives or {}).items():
            self._cache[tuple(k)] = np.asarray(v)
        self._cache.setdefault((0,) * grid.ndim, values)
        self._rho = None

    @classmethod
    def from_function(cls, domain, grid, fun, order=2, exact: Optional[Callable] = None):
        """Sample ``fun(points)``; ``exact(alpha, points)`` supplies derivatives."""
        pts = grid.all_points()
        vals = np.asarray(fun(pts))
        vals = vals.reshape(grid.shape + vals.shape[1:])
        ders = None
        if exact is not None:
            ders = {}
            for al in multi_indices(grid.ndim, order):
                d = np.asarray(exact(al, pts))
                ders[tuple(al)] = d.reshape(grid.shape + d.shape[1:])
        return cls(domain, grid, vals, order, ders)

    @property
    def ncomp(self) -> int:
        return 1 if self.values.ndim == self.grid.ndim else self.values.shape[-1]

    def derivative(self, alpha) -> np.ndarray:
        alpha = MultiIndex(alpha)
        if len(alpha) != self.grid.ndim:
            raise MultiIndexError("multi-index length differs from the dimension")
        if alpha.order > self.order:
            raise OrderError(
                f"derivative of order {alpha.order} requested, only {self.order} available")
        key = tuple(alpha)
        if key in self._cache:
            return self._cache[key]
        # peel one derivative off the highest axis with a nonzero entry
        k = max(i for i, e in enumerate(alpha) if e > 0)
        lower = list(alpha)
        lower[k] -= 1
        base = self.derivative(lower)
        mask = self.grid.mask
        if base.ndim > mask.ndim:
            mask = np.broadcast_to(mask[..., None], base.shape)
        d = _diff_axis(base, mask, self.grid.axes[k], k,
                       self.grid.period[k] if self.grid.periodic[k] else None)
        self._cache[key] = d
        return d

    def with_values(self, values, derivatives=None):
        return GridFunction(self.domain, self.grid, values, self.order, derivatives)

    def scaled(self, c):
        ders = {k: c * v for k, v in self._cache.items()}
        return GridFunction(self.domain, self.grid, c * self.values, self.order, ders)

    # weights ---------------------------------------------------------------

    @property
    def rho(self) -> np.ndarray:
        """Distance to the boundary at cell centres (full grid shape)."""
        if self._rho is None:
            pts = self.grid.all_points()
            r = np.full(len(pts), np.nan)
            m = self.grid.mask.ravel()
            r[m] = self.domain.distance(pts[m])
            self._rho = r.reshape(self.grid.shape)
        return self._rho

    def weight(self, q) -> np.ndarray:
        """Cell volume times the cell average of rho^q (zero outside the mask).

        rho is treated as affine across a cell with slope grad(rho); the
        average of t^q over the cell's rho range is then exact, which keeps
        strongly singular weights (q near -1) accurate near the boundary.
        """
        rho = self.rho
        mask = self.grid.mask
        width = np.zeros(self.grid.shape)
        for k in range(self.grid.ndim):
            g = _diff_axis(np.where(mask, rho, 0.0), mask, self.grid.axes[k], k,
                           self.grid.period[k] if self.grid.periodic[k] else None)
            sh = [1] * self.grid.ndim
            sh[k] = -1
            width = width + np.abs(np.nan_to_num(g)) * self.grid.widths[k].reshape(sh)
        w = _average_power(np.where(mask, rho, 1.0), width, float(q))
        return np.where(mask, w * self.grid.cell_volumes(), 0.0)

    def integrate(self, density, q=0.0) -> float:
        """Sum of density * rho^q over masked cells."""
        d = np.asarray(density)
        mask = self.grid.mask
        if np.any(~np.isfinite(d[mask])):
            raise ResolutionError("non-finite samples inside the domain")
        live = mask & (d != 0)
        return float(np.sum(d[live] * self.weight(q)[live]))

    def _abs(self, arr):
        a = np.abs(arr)
        if arr.ndim > self.grid.ndim:
            a = np.sqrt(np.sum(a * a, axis=-1))
        return a


def _norm_terms(U: GridFunction, params: NormParams, weight_exponent, shift):
    p = params.p
    n = U.grid.ndim
    if params.m > U.order:
        raise OrderError(f"norm of order {params.m} needs derivatives up to {params.m}, "
                         f"function carries {U.order}")
    pa = p * params.a if weight_exponent is None else float(weight_exponent)
    total = 0.0
    for al in multi_indices(n, params.m, shift[0]):
        q = pa + (p * (al.order - params.m) if shift[1] else 0.0)
        total += U.integrate(U._abs(U.derivative(al)) ** p, q)
    return total


def weighted_sobolev_norm_W(U: GridFunction, params: NormParams, weight_exponent=None) -> float:
    """(sum_{|alpha| <= m} int |D^alpha U|^p rho^{pa})^{1/p}."""
    return _norm_terms(U, params, weight_exponent, (0, False)) ** (1.0 / params.p)


def weighted_sobolev_norm_V(U: GridFunction, params: NormParams, weight_exponent=None) -> float:
    """(sum_{|beta| <= m} int |rho^{|beta| - m} D^beta U|^p rho^{pa})^{1/p}."""
    return _norm_terms(U, params, weight_exponent, (0, True)) ** (1.0 / params.p)


def top_order_seminorm(U: GridFunction, params: NormParams, weight_exponent=None) -> float:
    """(sum_{|gamma| = m} int |D^gamma U|^p rho^{pa})^{1/p}."""
    return _norm_terms(U, params, weight_exponent, (params.m, False)) ** (1.0 / params.p)


def hardy_ratio(U: GridFunction, params: NormParams) -> float:
    """norm_V / top-order seminorm; of size 1/s for functions vanishing at the boundary."""
    top = top_order_seminorm(U, params)
    if top == 0.0:
        raise ParameterError("top-order seminorm vanishes")
    return weighted_sobolev_norm_V(U, params) / top


def _log_cutoff(lam, ramp):
    from scipy.special import expit

    def smooth(u):
        u = np.clip(u, 1e-12, 1 - 1e-12)
        return expit((2 * u - 1) / (u * (1 - u)))

    return smooth(lam / ramp) * (1 - smooth((lam - 1 + ramp) / ramp))


def hardy_bump_study(s_values, p=2.0, count=50, rng=None, delta=1e-12, ramp=0.3,
                     gamma_range=(0.05, 2.0), layers=800, h=1 / 16):
    """max over random bumps of s * hardy_ratio, for each s.

    Bumps are (1 + c cos(2 pi x + theta)) y^gamma chi(y) on the flat periodic
    strip, chi a smooth cutoff in log y between delta and 1, so that they
    vanish at the boundary and probe every scale of the weight.
    """
    from .geometry import LipschitzGraphDomain
    rng = np.random.default_rng(rng)
    dom = LipschitzGraphDomain.from_function(lambda x: 0 * x, [0.0], [1.0], h)
    xn = np.concatenate([[0.0], np.geomspace(delta / 4, 1.0, int(layers))])
    grid = dom.volume_grid(h, xn_edges=xn)
    lo, hi = np.log(gamma_range[0]), np.log(gamma_range[1])
    gam = np.exp(rng.uniform(lo, hi, count))
    amp = rng.uniform(0, 0.5, count)
    ph = rng.uniform(0, 2 * np.pi, count)
    P = grid.all_points()
    x, y = P[:, 0], P[:, 1]
    cut = _log_cutoff(np.log(y / delta) / np.log(1 / delta), ramp)
    rows = []
    for s in s_values:
        pr = NormParams.from_s(p, s, 1)
        rs = np.empty(count)
        for b in range(count):
            u = (1 + amp[b] * np.cos(2 * np.pi * x + ph[b])) * y ** gam[b] * cut
            rs[b] = hardy_ratio(GridFunction(dom, grid, u.reshape(grid.shape), order=1), pr)
        rows.append({"p": float(p), "s": float(s), "max_ratio": float(rs.max()),
                     "statistic": float(rs.max() * s), "median": float(np.median(rs) * s)})
    return rows


# ---------------------------------------------------------------------------
# boundary functions


class BoundaryFunction:
    """Samples on a boundary grid; ``values`` has shape (N,) or (N, l)."""

    def __init__(self, bgrid: BoundaryGrid, values):
        values = np.asarray(values)
        if values.shape[0] != len(bgrid):
            raise ResolutionError(
                f"{values.shape[0]} samples for a boundary grid of {len(bgrid)} nodes")
        self.bgrid = bgrid
        self.values = values
        self.values.setflags(write=False)

    @classmethod
    def from_function(cls, bgrid, fun):
        return cls(bgrid, np.asarray(fun(bgrid.points)))

    @property
    def domain(self):
        return self.bgrid.domain

    def samples(self) -> SampleSet:
        return SampleSet(self.bgrid.points, self.values, self.bgrid.weights, self.bgrid.h)

    def __add__(self, other):
        v = other.values if isinstance(other, BoundaryFunction) else other
        return BoundaryFunction(self.bgrid, self.values + v)

    def __mul__(self, c):
        return BoundaryFunction(self.bgrid, self.values * c)

    __rmul__ = __mul__


def _pointwise_abs(v, vector=None):
    """|v| per sample; the trailing axis holds components when ``vector``."""
    a = np.abs(v)
    if vector is None:
        vector = a.ndim == 2
    return np.sqrt(np.sum(a * a, axis=-1)) if vector else a


def lp_norm(g: BoundaryFunction, p) -> float:
    return float(np.sum(_pointwise_abs(g.values) ** p * g.bgrid.weights) ** (1.0 / p))


def _pair_blocks(bgrid: BoundaryGrid, block=1024):
    """Yield (rows, displacement, distance) over row blocks of all node pairs."""
    P = bgrid.points
    N = len(P)
    for i0 in range(0, N, block):
        rows = np.arange(i0, min(N, i0 + block))
        disp = bgrid.displacement(P[rows, None, :], P[None, :, :])
        yield rows, disp, np.sqrt(np.sum(disp * disp, axis=-1))


def _cutoff(h):
    # equally spaced neighbours sit at distance h up to rounding
    return h * (1.0 - 1e-9)


def _annulus_sums(bgrid, pair_value, exponent, h):
    """sum_{|X-Y| >= h} pair_value(rows, disp) w_X w_Y |X-Y|^{-exponent}.

    The sum is accumulated per dyadic annulus h 2^k <= |X-Y| < h 2^{k+1}
    and the annuli are added in a fixed order, so the result does not depend
    on the block size.
    """
    w = bgrid.weights
    bins = np.zeros(64)
    cut = _cutoff(h)
    for rows, disp, dist in _pair_blocks(bgrid):
        keep = dist >= cut
        val = pair_value(rows, disp)
        with np.errstate(divide="ignore"):
            kern = np.where(keep, dist, 1.0) ** (-exponent)
        contrib = np.where(keep, val * kern, 0.0) * w[rows, None] * w[None, :]
        k = np.clip(np.floor(np.log2(np.where(keep, dist, cut) / cut)).astype(int), 0, 63)
        bins += np.bincount(k[keep], weights=contrib[keep], minlength=64)
    return float(np.sum(bins))


def besov_seminorm(g: BoundaryFunction, p, s) -> float:
    """(int int |g(X)-g(Y)|^p / |X-Y|^{n-1+sp})^{1/p}, pairs closer than h dropped."""
    _check_ps(p, s)
    v = g.values
    n = g.bgrid.n

    def diff(rows, disp):
        return _pointwise_abs(v[rows, None] - v[None, :], v.ndim == 2) ** p

    return _annulus_sums(g.bgrid, diff, n - 1 + s * p, g.bgrid.h) ** (1.0 / p)


def besov_norm(g: BoundaryFunction, p, s) -> float:
    """L_p norm plus the double-integral seminorm."""
    return lp_norm(g, p) + besov_seminorm(g, p, s)


def _check_ps(p, s):
    if not (1.0 < p < math.inf):
        raise ParameterError(f"p must lie in (1, inf), got {p}")
    if not (0.0 < s < 1.0):
        raise ParameterError(f"s must lie in (0, 1), got {s}")


def _modulus_profile(bgrid, pair_value, ladder):
    """Cumulative pair sums sum_{|X-Y| < t} value w w for each t in ladder."""
    w = bgrid.weights
    acc = np.zeros(len(ladder))
    for rows, disp, dist in _pair_blocks(bgrid):
        val = pair_value(rows, disp) * w[rows, None] * w[None, :]
        k = np.searchsorted(ladder, dist.ravel(), side="right")
        acc += np.bincount(k, weights=val.ravel(), minlength=len(ladder) + 1)[: len(ladder)]
    return np.cumsum(acc)


def lp_modulus(g: BoundaryFunction, p, t) -> float:
    """p-th root of int int_{|X-Y| < t} |g(X) - g(Y)|^p."""
    t = float(t)
    if t < _cutoff(g.bgrid.h):
        raise ResolutionError(f"t = {t} is below the boundary resolution {g.bgrid.h}")
    v = g.values

    def diff(rows, disp):
        return _pointwise_abs(v[rows, None] - v[None, :], v.ndim == 2) ** p

    return float(_modulus_profile(g.bgrid, diff, np.array([t]))[0]) ** (1.0 / p)


def _t_ladder(bgrid, per_octave=8):
    """Log-spaced evaluation points: cell midpoints from h up, then the top edge."""
    h = bgrid.h
    top = 2.0 * bgrid.diameter
    K = int(math.ceil(per_octave * math.log2(top / h)))
    mids = h * 2.0 ** ((np.arange(K) + 0.5) / per_octave)
    return np.append(mids, h * 2.0 ** (K / per_octave))


def _ladder_integral(ladder, omega_p, A, per_octave=8):
    """int_h^inf omega_p(t) t^{-A} dt/t: midpoint rule in log t, closed-form tail."""
    du = math.log(2.0) / per_octave
    body = float(np.sum(omega_p[:-1] * ladder[:-1] ** (-A)) * du)
    tail = float(omega_p[-1] * ladder[-1] ** (-A) / A)
    return body + tail


def besov_norm_modulus(g: BoundaryFunction, p, s, per_octave=8) -> float:
    """L_p norm plus (int omega_p(g,t)^p t^{-(n-1+sp)} dt/t)^{1/p}.

    Equivalent to besov_norm; by the layer-cake formula the double integral
    equals (n-1+sp) times the t-integral.
    """
    _check_ps(p, s)
    v = g.values
    n = g.bgrid.n

    def diff(rows, disp):
        return _pointwise_abs(v[rows, None] - v[None, :], v.ndim == 2) ** p

    ladder = _t_ladder(g.bgrid, per_octave)
    om = _modulus_profile(g.bgrid, diff, ladder)
    return lp_norm(g, p) + _ladder_integral(ladder, om, n - 1 + s * p, per_octave) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Whitney arrays and Taylor remainders


class WhitneyArray:
    """The family {f_alpha : |alpha| <= m - 1} on one boundary grid."""

    def __init__(self, bgrid: BoundaryGrid, m, components):
        self.bgrid = bgrid
        self.m = int(m)
        n = bgrid.n
        self.indices = multi_indices(n, self.m - 1)
        comp = {}
        for al in self.indices:
            key = tuple(al)
            if key not in components:
                raise MultiIndexError(f"missing component {key} of the Whitney array")
            f = components[key]
            f = f.values if isinstance(f, BoundaryFunction) else np.asarray(f)
            if f.shape[0] != len(bgrid):
                raise ResolutionError("component length differs from the boundary grid")
            comp[key] = f
        self._comp = comp

    @property
    def n(self):
        return self.bgrid.n

    @property
    def vector(self) -> bool:
        return next(iter(self._comp.values())).ndim == 2

    def __getitem__(self, alpha) -> np.ndarray:
        key = tuple(alpha)
        if key not in self._comp:
            raise MultiIndexError(f"no component {key} (order m = {self.m})")
        return self._comp[key]

    def component(self, alpha) -> BoundaryFunction:
        return BoundaryFunction(self.bgrid, self[alpha])

    def items(self):
        return [(al, self._comp[tuple(al)]) for al in self.indices]

    @classmethod
    def from_field(cls, bgrid, m, field):
        """f_alpha = d^alpha V on the boundary, ``field(alpha, points)``."""
        return cls(bgrid, m, {tuple(al): np.asarray(field(al, bgrid.points))
                              for al in multi_indices(bgrid.n, int(m) - 1)})

    @classmethod
    def random(cls, bgrid, m, rng, scale=1.0):
        """Independent Gaussian components (generally incompatible)."""
        return cls(bgrid, m, {tuple(al): scale * rng.standard_normal(len(bgrid))
                              for al in multi_indices(bgrid.n, int(m) - 1)})

    def map(self, fun):
        return WhitneyArray(self.bgrid, self.m, {k: fun(v) for k, v in self._comp.items()})

    def perturbed(self, alpha, delta):
        comp = dict(self._comp)
        comp[tuple(alpha)] = comp[tuple(alpha)] + delta
        return WhitneyArray(self.bgrid, self.m, comp)


def _check_alpha(fdot, alpha):
    alpha = MultiIndex(alpha)
    if len(alpha) != fdot.n:
        raise MultiIndexError("multi-index length differs from the dimension")
    if alpha.order > fdot.m - 1:
        raise MultiIndexError(f"|alpha| = {alpha.order} exceeds m - 1 = {fdot.m - 1}")
    return alpha


def _taylor_sum(fdot, alpha, disp, y_index):
    """sum_{|beta| <= m-1-|alpha|} f_{alpha+beta}(Y) disp^beta / beta!."""
    out = 0.0
    for be in multi_indices(fdot.n, fdot.m - 1 - alpha.order):
        f = fdot[alpha + be][y_index]
        out = out + f * be.power(disp) / be.factorial
    return out


def taylor_polynomial(fdot: WhitneyArray, alpha, X, Y) -> np.ndarray:
    """P_alpha(X, Y) for points X (any, shape (..., n)) and node indices Y.

    X - Y is taken as the plain difference (no periodic wrapping), so the
    polynomial identities hold exactly.
    """
    alpha = _check_alpha(fdot, alpha)
    Y = np.asarray(Y, dtype=int)
    X = np.asarray(X, dtype=float)
    disp = X - fdot.bgrid.points[Y]
    return _taylor_sum(fdot, alpha, disp, Y)


def taylor_remainder(fdot: WhitneyArray, alpha, X, Y) -> np.ndarray:
    """R_alpha(X, Y) = f_alpha(X) - P_alpha(X, Y) for node indices X and Y."""
    alpha = _check_alpha(fdot, alpha)
    X = np.asarray(X, dtype=int)
    Y = np.asarray(Y, dtype=int)
    P = fdot.bgrid.points
    return fdot[alpha][X] - _taylor_sum(fdot, alpha, P[X] - P[Y], Y)


def _remainder_matrix(fdot, alpha, rows, disp):
    """R_alpha(X_rows, Y_all) with the wrapped displacement."""
    out = fdot[alpha][rows][:, None] - _taylor_sum(fdot, alpha, disp, slice(None))
    return out


def higher_besov_norm(fdot: WhitneyArray, p, s, per_octave=8, return_parts=False):
    """sum ||f_alpha||_p + sum (int r_alpha(t)^p t^{-A_alpha} dt/t)^{1/p}.

    A_alpha = p (m - 1 + s - |alpha|) + n - 1 and r_alpha(t)^p is the double
    integral of |R_alpha|^p over pairs closer than t. The t-integral runs
    over a log ladder from the boundary resolution h to twice the diameter
    with the constant tail added in closed form; pairs below h contribute
    only through the first ladder point (finite truncation).
    """
    _check_ps(p, s)
    bg = fdot.bgrid
    n, m = bg.n, fdot.m
    ladder = _t_ladder(bg, per_octave)
    lp_part = 0.0
    semi = 0.0
    parts = {}
    for al in fdot.indices:
        lp = lp_norm(fdot.component(al), p)

        def rem(rows, disp, al=al):
            return _pointwise_abs(_remainder_matrix(fdot, al, rows, disp), fdot.vector) ** p

        om = _modulus_profile(bg, rem, ladder)
        A = p * (m - 1 + s - al.order) + n - 1
        sv = _ladder_integral(ladder, om, A, per_octave) ** (1.0 / p)
        parts[tuple(al)] = (lp, sv)
        lp_part += lp
        semi += sv
    if return_parts:
        return lp_part + semi, parts
    return lp_part + semi


def taylor_remainder_seminorm(fdot: WhitneyArray, alpha, p, s) -> float:
    """Double-integral form: (int int |R_alpha|^p / |X-Y|^{A_alpha + 1})^{1/p}."""
    alpha = _check_alpha(fdot, alpha)
    bg = fdot.bgrid
    A = p * (fdot.m - 1 + s - alpha.order) + bg.n - 1

    def rem(rows, disp):
        return _pointwise_abs(_remainder_matrix(fdot, alpha, rows, disp), fdot.vector) ** p

    return _annulus_sums(bg, rem, A, bg.h) ** (1.0 / p)


# ---------------------------------------------------------------------------
# compatibility


def compatibility_check(fdot: WhitneyArray, domain=None, tol=None) -> dict:
    """Residuals of (nu_j d_k - nu_k d_j) f_alpha = nu_j f_{alpha+e_k} - nu_k f_{alpha+e_j}.

    Tangential derivatives are boundary finite differences, so a compatible
    array leaves a residual of discretisation size. ``tol`` defaults to
    ``8 h scale`` with scale the largest |f_alpha| with |alpha| >= 1.
    """
    bg = fdot.bgrid
    n = bg.n
    if fdot.m == 1:
        return {"compatible": True, "vacuous": True, "max_residual": 0.0,
                "mean_residual": 0.0, "tol": 0.0, "residual": np.zeros(len(bg))}
    nu = bg.normals
    res = np.zeros(len(bg))
    details = {}
    for al in multi_indices(n, fdot.m - 2):
        tg = bg.tangential_gradient(fdot[al])
        for j in range(n):
            for k in range(j + 1, n):
                lhs = nu[:, j] * tg[:, k] - nu[:, k] * tg[:, j]
                rhs = nu[:, j] * fdot[al + unit_index(n, k)] - nu[:, k] * fdot[al + unit_index(n, j)]
                r = _pointwise_abs(lhs - rhs, fdot.vector)
                details[(tuple(al), j, k)] = float(r.max())
                res = np.maximum(res, r)
    if tol is None:
        scale = max(float(np.max(_pointwise_abs(v))) for al, v in fdot.items() if al.order >= 1)
        tol = 8.0 * bg.h * max(scale, 1.0)
    mx = float(res.max())
    return {"compatible": mx <= tol, "vacuous": False, "max_residual": mx,
            "mean_residual": float(np.sum(res * bg.weights) / bg.measure),
            "tol": float(tol), "residual": res, "by_identity": details}


def require_compatible(fdot, domain=None, tol=None):
    rep = compatibility_check(fdot, domain, tol)
    if not rep["compatible"]:
        raise CompatibilityError(
            f"Whitney array violates compatibility: max residual {rep['max_residual']:.3g} "
            f"> tol {rep['tol']:.3g}")
    return rep


# ---------------------------------------------------------------------------
# remainder along a graph boundary as an integral over simplices


def _simplex_rule(r, order):
    """Nodes (Q, r) with t_1 >= ... >= t_r in [0,1] and weights (Q,)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    U = np.array(list(itertools.product(x, repeat=r)))
    W = np.prod(np.array(list(itertools.product(w, repeat=r))), axis=1)
    T = np.cumprod(U, axis=1)
    jac = np.prod(T[:, :-1], axis=1) if r > 1 else np.ones(len(T))
    return T, W * jac


def remainder_integral_form(field, phi, dphi, alpha, m, Xp, Yp, order=12):
    """R_alpha(Phi(X'), Phi(Y')) on the graph of phi through simplex integrals.

    With Phi(x') = (x', phi(x')), Delta = X' - Y' and r = m - 1 - |alpha|,

        R_alpha = sum_{j_1..j_r} int_{Delta_r} [f_{alpha + e_j1 + ... + e_jr}(Phi(Y' + t_r Delta))
                  - f_{...}(Phi(Y'))] prod_k grad Phi_{j_k}(Y' + t_k Delta) . Delta dt

    over Delta_r = {1 >= t_1 >= ... >= t_r >= 0}. It requires a compatible
    array (traces of one function) and |alpha| <= m - 2. ``field(beta, X)``
    gives f_beta at points X; ``phi`` and ``dphi`` take x' of shape (Q, n-1)
    and return (Q,) and (Q, n-1).
    """
    alpha = MultiIndex(alpha)
    r = int(m) - 1 - alpha.order
    if r < 1:
        raise MultiIndexError("the integral form needs |alpha| <= m - 2")
    Xp = np.atleast_1d(np.asarray(Xp, dtype=float))
    Yp = np.atleast_1d(np.asarray(Yp, dtype=float))
    n = len(alpha)
    if Xp.shape[-1] != n - 1:
        Xp = Xp.reshape(-1, n - 1)
        Yp = Yp.reshape(-1, n - 1)
    delta = Xp - Yp

    def Phi(xp):
        return np.concatenate([xp, np.reshape(phi(xp), (-1, 1))], axis=1)

    def dPhi_dot(xp, j, d):
        if j < n - 1:
            return np.full(len(xp), d[j])
        return dphi(xp) @ d

    T, W = _simplex_rule(r, order)
    out = np.zeros(len(Xp))
    for i in range(len(Xp)):
        d = delta[i]
        y = Yp[i]
        pts = y[None, :] + T[:, :, None] * d[None, None, :]  # (Q, r, n-1)
        base = Phi(y[None, :])
        end = Phi(pts[:, -1, :])
        dots = np.stack([np.stack([dPhi_dot(pts[:, k, :], j, d) for j in range(n)], axis=1)
                         for k in range(r)], axis=1)  # (Q, r, n)
        total = 0.0
        for js in itertools.product(range(n), repeat=r):
            be = alpha
            for j in js:
                be = be + unit_index(n, j)
            fe = np.asarray(field(be, end)).reshape(-1)
            f0 = float(np.asarray(field(be, base)).reshape(-1)[0])
            prod = np.ones(len(T))
            for k, j in enumerate(js):
                prod = prod * dots[:, k, j]
            total += float(np.sum(W * (fe - f0) * prod))
        out[i] = total
    return out


def graph_remainder(field, phi, alpha, m, Xp, Yp):
    """Direct R_alpha(Phi(X'), Phi(Y')) from the field values."""
    alpha = MultiIndex(alpha)
    Xp = np.atleast_1d(np.asarray(Xp, dtype=float))
    Yp = np.atleast_1d(np.asarray(Yp, dtype=float))
    n = len(alpha)
    Xp = Xp.reshape(-1, n - 1)
    Yp = Yp.reshape(-1, n - 1)
    X = np.concatenate([Xp, np.reshape(phi(Xp), (-1, 1))], axis=1)
    Y = np.concatenate([Yp, np.reshape(phi(Yp), (-1, 1))], axis=1)
    out = np.asarray(field(alpha, X), dtype=float).reshape(-1).copy()
    for be in multi_indices(n, int(m) - 1 - alpha.order):
        out -= np.asarray(field(alpha + be, Y)).reshape(-1) * be.power(X - Y) / be.factorial
    return out


# ---------------------------------------------------------------------------
# smooth test fields with exact derivatives


@dataclass
class PolynomialField:
    """V(X) = sum c_gamma X^gamma with exact partial derivatives."""

    coeffs: dict

    @property
    def n(self):
        return len(next(iter(self.coeffs)))

    @classmethod
    def random(cls, n, degree, rng, scale=1.0):
        return cls({tuple(g): scale * rng.standard_normal()
                    for g in multi_indices(n, degree)})

    def __call__(self, alpha, X):
        X = np.asarray(X, dtype=float)
        alpha = MultiIndex(alpha)
        out = np.zeros(X.shape[:-1])
        for g, c in self.coeffs.items():
            g = MultiIndex(g)
            if any(a > b for a, b in zip(alpha, g)):
                continue
            fac = 1
            for a, b in zip(alpha, g):
                fac *= math.factorial(b) // math.factorial(b - a)
            out = out + c * fac * (g - alpha).power(X)
        return out

    def value(self, X):
        return self(zero_index(self.n), X)


@dataclass
class TrigField:
    """V(X) = sum_k c_k cos(w_k . X + theta_k) with exact derivatives.

    ``random`` draws wave vectors whose first n-1 entries are multiples of
    2 pi / period, so the field is periodic along a periodic graph window.
    """

    amps: np.ndarray
    waves: np.ndarray
    phases: np.ndarray

    @classmethod
    def random(cls, n, rng, terms=4, max_freq=2.0, period=None, scale=1.0):
        waves = rng.uniform(-max_freq, max_freq, size=(terms, n))
        if period is not None:
            per = np.broadcast_to(np.asarray(period, float), (n - 1,))
            base = 2 * np.pi / per
            k = np.round(waves[:, : n - 1] / base)
            waves[:, : n - 1] = k * base
        amps = scale * rng.standard_normal(terms) / np.sqrt(terms)
        phases = rng.uniform(0, 2 * np.pi, size=terms)
        return cls(amps, waves, phases)

    @property
    def n(self):
        return self.waves.shape[1]

    def __call__(self, alpha, X):
        X = np.asarray(X, dtype=float)
        alpha = MultiIndex(alpha)
        arg = X @ self.waves.T + self.phases + 0.5 * np.pi * alpha.order
        fac = np.prod(self.waves ** np.asarray(alpha)[None, :], axis=1)
        return np.cos(arg) @ (self.amps * fac)

    def value(self, X):
        return self(zero_index(self.n), X)
