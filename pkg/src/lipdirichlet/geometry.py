"""Domains, grids, normals, Whitney cubes and mean-oscillation functionals.

Two domain families are supported: periodic Lipschitz graph domains
{X_n > phi(X')} in two or three dimensions, and simple polygons in the plane.
Both expose the same small interface (``contains``, ``distance``,
``boundary_grid``, ``volume_grid``) used by the rest of the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.special import expit

from .errors import DomainError, ResolutionError


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Tensor grid of cells with a boolean mask of cells inside the domain.

    ``axes[k]`` are the cell centres along axis k, ``widths[k]`` the cell
    widths. Axes flagged periodic wrap around with period ``period[k]``.
    """

    axes: tuple
    widths: tuple
    mask: np.ndarray
    periodic: tuple
    period: tuple

    @classmethod
    def from_edges(cls, edges: Sequence[np.ndarray], inside: Optional[Callable] = None,
                   periodic=None):
        edges = [np.asarray(e, dtype=float) for e in edges]
        axes = tuple(0.5 * (e[1:] + e[:-1]) for e in edges)
        widths = tuple(np.diff(e) for e in edges)
        per = tuple(bool(b) for b in (periodic or [False] * len(edges)))
        period = tuple((e[-1] - e[0]) if p else None for e, p in zip(edges, per))
        shape = tuple(len(a) for a in axes)
        if inside is None:
            mask = np.ones(shape, dtype=bool)
        else:
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=1)
            mask = np.asarray(inside(pts), dtype=bool).reshape(shape)
        return cls(axes, widths, mask, per, period)

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def h(self):
        return float(min(w.min() for w in self.widths))

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def cell_volumes(self):
        vol = np.ones(self.shape)
        for k, w in enumerate(self.widths):
            sh = [1] * self.ndim
            sh[k] = -1
            vol = vol * w.reshape(sh)
        return vol

    def points(self):
        """Centres of masked cells, shape (M, n)."""
        mesh = self.mesh()
        return np.stack([m[self.mask] for m in mesh], axis=1)

    def all_points(self):
        mesh = self.mesh()
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class BoundaryGrid:
    """Quadrature nodes on the boundary.

    ``param`` holds X' for graph domains and arclength for polygons;
    ``edge`` the polygon edge of each node (-1 for graphs). ``period`` is the
    X' period vector for periodic graphs (None otherwise).
    """

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    param: np.ndarray
    edge: np.ndarray
    h: float
    period: Optional[np.ndarray] = None
    domain: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.weights)

    @property
    def measure(self):
        return float(self.weights.sum())

    def displacement(self, X, Y):
        """X - Y with X' wrapped into the minimal periodic image."""
        d = np.asarray(X, dtype=float) - np.asarray(Y, dtype=float)
        if self.period is not None:
            k = len(self.period)
            d = d.copy()
            d[..., :k] -= self.period * np.round(d[..., :k] / self.period)
        return d

    def tangents(self):
        """Unit tangent (counterclockwise / increasing X') for n = 2."""
        if self.n != 2:
            raise DomainError("a single tangent field exists only for n = 2")
        nu = self.normals
        return np.stack([-nu[:, 1], nu[:, 0]], axis=1)

    @property
    def diameter(self):
        p = self.points
        if self.period is not None:
            ext = np.concatenate([self.period, [np.ptp(p[:, -1])]])
            return float(np.sqrt(np.sum((0.5 * ext) ** 2)))
        lo, hi = p.min(0), p.max(0)
        return float(np.linalg.norm(hi - lo))

    def tangential_gradient(self, values):
        """Tangential gradient of a boundary function, shape (N, n).

        Polygons: centred arclength differences inside each edge (one-sided at
        edge ends, so corners never mix two normals). Graphs: periodic
        differences in X' and the surface metric.
        """
        f = np.asarray(values)
        if self.edge is not None and np.all(self.edge >= 0):
            tau = self.tangents()
            dfds = np.empty(f.shape, dtype=f.dtype)
            for e in np.unique(self.edge):
                idx = np.nonzero(self.edge == e)[0]
                idx = idx[np.argsort(self.param[idx])]
                if len(idx) == 1:
                    dfds[idx] = 0.0
                    continue
                s = self.param[idx]
                dfds[idx] = np.gradient(f[idx], s, edge_order=2 if len(idx) > 2 else 1)
            return dfds[:, None] * tau
        dom = self.domain
        return dom._graph_tangential_gradient(self, f)


class _DomainBase:
    def is_interior(self, X, tol=0.0):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.contains(X) & (self.distance(X) > tol)


# ---------------------------------------------------------------------------
# graph domains


class LipschitzGraphDomain(_DomainBase):
    """{X : X_n > phi(X')} with phi sampled on a uniform grid over a window.

    Samples are at ``origin + i*h``; with ``periodic=True`` (default) phi is
    extended periodically outside the window.
    """

    kind = "graph"

    def __init__(self, phi, h, origin=None, periodic=True):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim not in (1, 2):
            raise DomainError("phi must be sampled over R^1 or R^2")
        self.phi = phi
        self.n = phi.ndim + 1
        self.h = float(h)
        self.origin = np.zeros(self.n - 1) if origin is None else np.asarray(origin, dtype=float)
        self.periodic = bool(periodic)
        nsteps = np.array(phi.shape) if periodic else np.array(phi.shape) - 1
        self.window = np.stack([self.origin, self.origin + nsteps * self.h], axis=1)
        self.period = nsteps * self.h if periodic else None
        self._grad = self._sample_gradient()
        self._trees = {}

    @classmethod
    def from_function(cls, fun, lo, hi, h, periodic=True):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        counts = np.rint((hi - lo) / h).astype(int)
        axes = [lo[k] + h * np.arange(counts[k] + (0 if periodic else 1)) for k in range(len(lo))]
        mesh = np.meshgrid(*axes, indexing="ij")
        vals = np.asarray(fun(*mesh), dtype=float)
        return cls(vals, h, origin=lo, periodic=periodic)

    # sampled phi and gradient -------------------------------------------
    def _sample_gradient(self):
        g = []
        for ax in range(self.phi.ndim):
            if self.periodic:
                d = (np.roll(self.phi, -1, ax) - np.roll(self.phi, 1, ax)) / (2 * self.h)
            else:
                d = np.gradient(self.phi, self.h, axis=ax, edge_order=2)
            g.append(d)
        return np.stack(g, axis=-1)

    @property
    def lip_constant(self):
        """Max over grid cells of the discrete gradient norm."""
        phi = self.phi
        if phi.ndim == 1:
            d = np.diff(np.concatenate([phi, phi[:1]])) if self.periodic else np.diff(phi)
            return float(np.max(np.abs(d)) / self.h)
        if self.periodic:
            p = np.pad(phi, ((0, 1), (0, 1)), mode="wrap")
        else:
            p = phi
        dx = 0.5 * ((p[1:, :-1] - p[:-1, :-1]) + (p[1:, 1:] - p[:-1, 1:])) / self.h
        dy = 0.5 * ((p[:-1, 1:] - p[:-1, :-1]) + (p[1:, 1:] - p[1:, :-1])) / self.h
        return float(np.max(np.hypot(dx, dy)))

    def _coords(self, xp):
        xp = np.atleast_2d(np.asarray(xp, dtype=float))
        return ((xp - self.origin) / self.h).T

    def _interp(self, arr, xp):
        mode = "grid-wrap" if self.periodic else "nearest"
        return ndimage.map_coordinates(arr, self._coords(xp), order=1, mode=mode)

    def phi_at(self, xp):
        """Piecewise-linear interpolant of phi at points X' (shape (M, n-1))."""
        return self._interp(self.phi, np.asarray(xp, dtype=float).reshape(-1, self.n - 1))

    def grad_phi_at(self, xp):
        xp = np.asarray(xp, dtype=float).reshape(-1, self.n - 1)
        return np.stack([self._interp(self._grad[..., k], xp) for k in range(self.n - 1)], axis=1)

    # geometry ----------------------------------------------------------
    def contains(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X[:, -1] > self.phi_at(X[:, :-1])

    def _cloud(self, spacing):
        r = max(1, int(math.ceil(self.h / spacing)))
        if r in self._trees:
            return self._trees[r]
        hs = self.h / r
        axes = []
        for k in range(self.n - 1):
            lo, hi = self.window[k]
            cnt = int(round((hi - lo) / hs))
            axes.append(lo + hs * np.arange(cnt + 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        xp = np.stack([m.ravel() for m in mesh], axis=1)
        pts = np.concatenate([xp, self.phi_at(xp)[:, None]], axis=1)
        if self.periodic:
            shifts = np.array(np.meshgrid(*[[-1, 0, 1]] * (self.n - 1), indexing="ij")).reshape(self.n - 1, -1).T
            copies = []
            for sh in shifts:
                q = pts.copy()
                q[:, :-1] += sh * self.period
                copies.append(q)
            pts = np.concatenate(copies)
        tree = cKDTree(pts)
        self._trees[r] = tree
        return tree

    def distance(self, X):
        """Distance to the boundary, from a densely sampled polyline/surface."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        tree = self._cloud(self.h / (8 if self.n == 2 else 4))
        q = X.copy()
        if self.periodic:
            q[:, :-1] = self.origin + np.mod(q[:, :-1] - self.origin, self.period)
        if self.n != 2:
            return tree.query(q)[0]
        # polyline: refine with the segments next to the nearest cloud vertices
        d0, idx = tree.query(q, k=3)
        pts = tree.data
        run = int(round((self.window[0, 1] - self.window[0, 0]) / (self.h / 8))) + 1
        best = d0[:, 0].copy()
        for col in range(idx.shape[1]):
            i = idx[:, col]
            for j0 in (i - 1, i):
                ok = (j0 >= 0) & (j0 + 1 < len(pts)) & (np.mod(j0, run) != run - 1)
                j0c = np.clip(j0, 0, len(pts) - 2)
                A, B = pts[j0c], pts[j0c + 1]
                AB = B - A
                t = np.clip(np.sum((q - A) * AB, axis=1) / np.maximum(np.sum(AB * AB, axis=1), 1e-300),
                            0.0, 1.0)
                d = np.linalg.norm(q - (A + t[:, None] * AB), axis=1)
                best = np.where(ok, np.minimum(best, d), best)
        return best

    def boundary_cloud(self, spacing):
        return self._cloud(spacing).data

    def on_boundary(self, X, tol=1e-9):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scale = max(1.0, float(np.max(np.abs(X))))
        return np.abs(X[:, -1] - self.phi_at(X[:, :-1])) <= tol * scale

    def normal_at(self, xp):
        g = self.grad_phi_at(xp)
        nu = np.concatenate([g, -np.ones((len(g), 1))], axis=1)
        return nu / np.linalg.norm(nu, axis=1, keepdims=True)

    def boundary_grid(self, refine=1):
        """Boundary nodes at the phi samples (optionally refined by an integer)."""
        r = int(refine)
        hs = self.h / r
        axes = []
        for k in range(self.n - 1):
            lo, hi = self.window[k]
            cnt = int(round((hi - lo) / hs)) + (0 if self.periodic else 1)
            axes.append(lo + hs * np.arange(cnt))
        mesh = np.meshgrid(*axes, indexing="ij")
        xp = np.stack([m.ravel() for m in mesh], axis=1)
        ph = self.phi_at(xp)
        g = self.grad_phi_at(xp)
        pts = np.concatenate([xp, ph[:, None]], axis=1)
        nu = self.normal_at(xp)
        w = hs ** (self.n - 1) * np.sqrt(1.0 + np.sum(g * g, axis=1))
        if not self.periodic:
            # trapezoid end weights
            for k in range(self.n - 1):
                end = np.isclose(xp[:, k], axes[k][0]) | np.isclose(xp[:, k], axes[k][-1])
                w = np.where(end, 0.5 * w, w)
        return BoundaryGrid(pts, nu, w, xp if self.n > 2 else xp[:, 0],
                            -np.ones(len(w), dtype=int), hs,
                            None if self.period is None else np.asarray(self.period, float),
                            domain=self)

    def volume_grid(self, h=None, height=1.0, xn_edges=None):
        """Cell grid over the window (periodic in X') times an X_n range.

        ``xn_edges`` overrides the uniform X_n edges (e.g. a graded grid).
        """
        h = self.h if h is None else float(h)
        edges = []
        for k in range(self.n - 1):
            lo, hi = self.window[k]
            cnt = int(round((hi - lo) / h))
            edges.append(lo + h * np.arange(cnt + 1))
        if xn_edges is None:
            base = float(self.phi.min())
            cnt = int(round(height / h))
            xn_edges = base + h * np.arange(cnt + 1)
        edges.append(np.asarray(xn_edges, dtype=float))
        per = [self.periodic] * (self.n - 1) + [False]
        return CellGrid.from_edges(edges, inside=lambda P: self.is_interior(P), periodic=per)

    def _graph_tangential_gradient(self, bgrid, f):
        n = self.n
        hs = bgrid.h
        if n == 2:
            if self.periodic:
                dfdx = (np.roll(f, -1) - np.roll(f, 1)) / (2 * hs)
            else:
                dfdx = np.gradient(f, hs, edge_order=2)
            xp = bgrid.param.reshape(-1, 1)
            g = self.grad_phi_at(xp)[:, 0]
            # d/dX'[f(Phi)] = grad_T f . (1, phi')
            tvec = np.stack([np.ones_like(g), g], axis=1)
            return (dfdx / (1 + g * g))[:, None] * tvec
        shape = tuple(len(np.unique(bgrid.param[:, k])) for k in range(n - 1))
        F = f.reshape(shape)
        derivs = []
        for ax in range(n - 1):
            if self.periodic:
                d = (np.roll(F, -1, ax) - np.roll(F, 1, ax)) / (2 * hs)
            else:
                d = np.gradient(F, hs, axis=ax, edge_order=2)
            derivs.append(d.ravel())
        g = self.grad_phi_at(bgrid.param)
        # tangent vectors Phi_a = e_a + g_a e_n
        T = np.zeros((len(f), n - 1, n))
        for a in range(n - 1):
            T[:, a, a] = 1.0
            T[:, a, -1] = g[:, a]
        G = np.einsum("iak,ibk->iab", T, T)
        rhs = np.stack(derivs, axis=1)
        coef = np.linalg.solve(G, rhs[..., None])[..., 0]
        return np.einsum("ia,iak->ik", coef, T)


# ---------------------------------------------------------------------------
# polygons


def _segment_distance(P, A, B):
    """Distance from points P (M,2) to segments A->B (E,2); returns (M,E)."""
    AB = B - A
    L2 = np.sum(AB * AB, axis=1)
    AP = P[:, None, :] - A[None, :, :]
    t = np.clip(np.sum(AP * AB[None], axis=2) / L2[None], 0.0, 1.0)
    C = A[None] + t[..., None] * AB[None]
    return np.linalg.norm(P[:, None, :] - C, axis=2)


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 * o2 < 0 and o3 * o4 < 0


class PolygonalDomain2D(_DomainBase):
    """Simple polygon; vertices are reordered counterclockwise if needed."""

    kind = "polygon"
    n = 2
    periodic = False

    def __init__(self, vertices, h):
        V = np.asarray(vertices, dtype=float)
        if len(V) > 1 and np.allclose(V[0], V[-1]):
            V = V[:-1]
        if len(V) < 3:
            raise DomainError("a polygon needs at least three vertices")
        area = 0.5 * np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1])
        if area < 0:
            V = V[::-1].copy()
        self.vertices = V
        self.h = float(h)
        self.starts = V
        self.ends = np.roll(V, -1, axis=0)
        d = self.ends - self.starts
        self.lengths = np.linalg.norm(d, axis=1)
        if np.any(self.lengths == 0):
            raise DomainError("repeated vertex")
        self.tangent = d / self.lengths[:, None]
        self.edge_normals = np.stack([self.tangent[:, 1], -self.tangent[:, 0]], axis=1)
        k = len(V)
        for i in range(k):
            for j in range(i + 1, k):
                if j == i + 1 or (i == 0 and j == k - 1):
                    continue
                if _segments_intersect(self.starts[i], self.ends[i], self.starts[j], self.ends[j]):
                    raise DomainError("polygon is self-intersecting")
        self._clouds = {}

    @property
    def area(self):
        V = self.vertices
        return float(0.5 * np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1]))

    @property
    def perimeter(self):
        return float(self.lengths.sum())

    def contains(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        x, y = X[:, 0:1], X[:, 1:2]
        ax, ay = self.starts[:, 0], self.starts[:, 1]
        bx, by = self.ends[:, 0], self.ends[:, 1]
        cond = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (y - ay) * (bx - ax) / (by - ay)
        cross = cond & (x < xint)
        return (np.sum(cross, axis=1) % 2) == 1

    def distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X))
        for s in range(0, len(X), 4096):
            out[s:s + 4096] = _segment_distance(X[s:s + 4096], self.starts, self.ends).min(axis=1)
        return out

    def on_boundary(self, X, tol=1e-9):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scale = max(1.0, float(np.max(np.abs(X))))
        return self.distance(X) <= tol * scale

    def boundary_cloud(self, spacing):
        key = float(spacing)
        if key not in self._clouds:
            pts = []
            for a, b, L in zip(self.starts, self.ends, self.lengths):
                k = max(1, int(math.ceil(L / spacing)))
                t = np.arange(k) / k
                pts.append(a + t[:, None] * (b - a))
            self._clouds[key] = np.concatenate(pts)
        return self._clouds[key]

    def boundary_grid(self, spacing=None):
        """Midpoint nodes on each edge with roughly the requested spacing."""
        spacing = self.h if spacing is None else float(spacing)
        pts, nus, ws, ss, es = [], [], [], [], []
        s0 = 0.0
        for e, (a, b, L) in enumerate(zip(self.starts, self.ends, self.lengths)):
            k = max(1, int(math.ceil(L / spacing - 1e-9)))
            t = (np.arange(k) + 0.5) / k
            pts.append(a + t[:, None] * (b - a))
            nus.append(np.repeat(self.edge_normals[e][None], k, axis=0))
            ws.append(np.full(k, L / k))
            ss.append(s0 + t * L)
            es.append(np.full(k, e))
            s0 += L
        return BoundaryGrid(np.concatenate(pts), np.concatenate(nus), np.concatenate(ws),
                            np.concatenate(ss), np.concatenate(es), spacing, None, domain=self)

    def volume_grid(self, h=None):
        h = self.h if h is None else float(h)
        lo = self.vertices.min(0)
        hi = self.vertices.max(0)
        edges = []
        for k in range(2):
            cnt = int(math.ceil((hi[k] - lo[k]) / h - 1e-9))
            edges.append(lo[k] + h * np.arange(cnt + 1))
        return CellGrid.from_edges(edges, inside=lambda P: self.is_interior(P))

    def normal_at_point(self, X, tol):
        d = _segment_distance(np.atleast_2d(X), self.starts, self.ends)[0]
        e = int(np.argmin(d))
        if d[e] > tol:
            raise DomainError(f"point {X} is not on the polygon boundary")
        return self.edge_normals[e].copy()


def unit_square(h):
    return PolygonalDomain2D([(0, 0), (1, 0), (1, 1), (0, 1)], h)


def unit_normal(domain, boundary_point, tol=1e-9):
    """Outward unit normal at a boundary point."""
    X = np.asarray(boundary_point, dtype=float)
    if isinstance(domain, PolygonalDomain2D):
        scale = max(1.0, float(np.max(np.abs(X))))
        return domain.normal_at_point(X, tol * scale)
    if not domain.on_boundary(X[None], tol)[0]:
        raise DomainError(f"point {X} is not on the graph boundary")
    return domain.normal_at(X[None, :-1])[0]


# ---------------------------------------------------------------------------
# mean oscillation


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Weighted point samples of a (possibly vector-valued) function."""

    points: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    resolution: float

    def restrict(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return SampleSet(self.points[keep], self.values[keep], self.weights[keep], self.resolution)


def as_samples(f, resolution=None) -> SampleSet:
    if isinstance(f, SampleSet):
        return f
    if hasattr(f, "samples"):
        return f.samples()
    pts, vals, w = f
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if resolution is None:
        if len(pts) > 1:
            dd = cKDTree(pts).query(pts, k=2)[0][:, 1]
            resolution = float(np.min(dd[dd > 0]))
        else:
            resolution = 1.0
    return SampleSet(pts, np.asarray(vals), np.asarray(w, dtype=float), float(resolution))


def _restrict(samples, region):
    if region is None:
        return samples
    if callable(region):
        keep = region(samples.points)
    else:
        lo, hi = (np.atleast_1d(np.asarray(r, dtype=float)) for r in region)
        keep = np.all((samples.points >= lo) & (samples.points <= hi), axis=1)
    return samples.restrict(keep)


class _Balls:
    """Membership oracle for balls centred at sample points."""

    def __init__(self, pts):
        self.pts = pts
        if pts.shape[1] == 1:
            self.order = np.argsort(pts[:, 0], kind="stable")
            self.sorted = pts[self.order, 0]
            self.tree = None
        else:
            self.tree = cKDTree(pts)

    def members(self, centres, r):
        if self.tree is None:
            c = self.pts[centres, 0]
            lo = np.searchsorted(self.sorted, c - r, "left")
            hi = np.searchsorted(self.sorted, c + r, "right")
            return [self.order[a:b] for a, b in zip(lo, hi)]
        lists = self.tree.query_ball_point(self.pts[centres], r)
        return [np.asarray(sorted(L), dtype=int) for L in lists]


def _centres(N, max_centres):
    stride = max(1, int(math.ceil(N / max_centres)))
    return np.arange(0, N, stride)


def _mean_dev(v, w):
    W = w.sum()
    m = (w[:, None] * v).sum(0) / W if v.ndim == 2 else np.dot(w, v) / W
    d = v - m
    a = np.linalg.norm(d, axis=1) if v.ndim == 2 else np.abs(d)
    return float(np.dot(w, a) / W)


def _double_mean(v, w, cap=3000):
    W = w.sum()
    if v.ndim == 1 and not np.iscomplexobj(v):
        o = np.argsort(v, kind="stable")
        vs, ws = v[o], w[o]
        cw = np.cumsum(ws) - ws
        cf = np.cumsum(ws * vs) - ws * vs
        total = np.sum(ws * (vs * cw - cf))
        return float(2.0 * total / (W * W))
    V = v if v.ndim == 2 else np.stack([v.real, v.imag], axis=1)
    if len(V) > cap:
        keep = np.linspace(0, len(V) - 1, cap).astype(int)
        V, w = V[keep], w[keep]
        W = w.sum()
    tot = 0.0
    for s in range(0, len(V), 512):
        D = np.linalg.norm(V[s:s + 512, None, :] - V[None, :, :], axis=2)
        tot += float(w[s:s + 512] @ D @ w)
    return tot / (W * W)


def _values2d(samples):
    v = samples.values
    if np.iscomplexobj(v) and v.ndim == 1:
        return np.stack([v.real, v.imag], axis=1)
    return v


def bmo_seminorm(f, region=None, radii=None, max_centres=1500, return_ball=False):
    """Sup over a dyadic ball family of the mean deviation from the ball mean.

    Balls have centres on (a deterministic subset of) the sample points and
    radii ``resolution * 2**k`` up to the sample diameter; passing ``radii``
    fixes the family explicitly.
    """
    S = _restrict(as_samples(f), region)
    if len(S.weights) == 0:
        raise DomainError("empty region for the BMO seminorm")
    vals = _values2d(S)
    if radii is None:
        diam = float(np.linalg.norm(S.points.max(0) - S.points.min(0)))
        radii = [S.resolution]
        while radii[-1] < diam:
            radii.append(2.0 * radii[-1])
    balls = _Balls(S.points)
    centres = _centres(len(S.weights), max_centres)
    best, arg = 0.0, None
    for r in radii:
        for c, mem in zip(centres, balls.members(centres, r)):
            if len(mem) < 2:
                continue
            d = _mean_dev(vals[mem], S.weights[mem])
            if d > best:
                best, arg = d, (S.points[c].copy(), r)
    return (best, arg) if return_ball else best


def infinitesimal_oscillation(f, region=None, eps_ladder=(), max_centres=1500):
    """Return [(eps, sup over eps-balls of the double mean of |f(X)-f(Y)|)]."""
    S = _restrict(as_samples(f), region)
    if len(S.weights) == 0:
        raise DomainError("empty region for the oscillation functional")
    eps = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ResolutionError("eps ladder must be strictly decreasing")
    if eps and eps[-1] < 2.0 * S.resolution * (1 - 1e-12):
        raise ResolutionError(f"eps={eps[-1]} below twice the grid resolution {S.resolution}")
    vals = _values2d(S)
    balls = _Balls(S.points)
    centres = _centres(len(S.weights), max_centres)
    out = []
    for e in eps:
        best = 0.0
        for mem in balls.members(centres, e):
            if len(mem) < 2:
                continue
            best = max(best, _double_mean(vals[mem], S.weights[mem]))
        out.append((e, best))
    return out


def interval_samples(fun, lo, hi, count, geometric=False):
    """Midpoint samples of a 1-D function; geometric spacing towards ``lo``."""
    if geometric:
        t = np.linspace(np.log(hi), np.log(lo), count + 1)
        edges = np.exp(t)[::-1]
        edges[0], edges[-1] = lo, hi
    else:
        edges = np.linspace(lo, hi, count + 1)
    x = 0.5 * (edges[1:] + edges[:-1])
    w = np.diff(edges)
    return SampleSet(x[:, None], np.asarray(fun(x)), w, float(w.min()))


def sawtooth_phi(eps):
    """phi_eps(x) = x sin(eps log(1/|x|)), with phi_eps(0) = 0."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        ax = np.where(x == 0, 1.0, np.abs(x))
        return np.where(x == 0, 0.0, x * np.sin(eps * np.log(1.0 / ax)))

    return phi


def sawtooth_dphi(eps):
    def dphi(x):
        x = np.asarray(x, dtype=float)
        ax = np.where(x == 0, 1.0, np.abs(x))
        th = eps * np.log(1.0 / ax)
        return np.sin(th) - eps * np.cos(th)

    return dphi


def sawtooth_study(eps_values, count=4000, max_centres=1500):
    """[phi_eps']_BMO / eps and sup |phi_eps'| / sqrt(1 + eps^2) for each eps.

    Samples are geometric on [exp(-T), 1] with T = (pi + 1)/eps + 5, so
    the phase eps log(1/x) sweeps more than a full period.
    """
    rows = []
    for eps in eps_values:
        eps = float(eps)
        T = (math.pi + 1.0) / eps + 5.0
        S = interval_samples(sawtooth_dphi(eps), math.exp(-T), 1.0, int(count), geometric=True)
        b = bmo_seminorm(S, max_centres=max_centres)
        sup = float(np.max(np.abs(S.values)))
        rows.append({"eps": eps, "bmo": float(b), "bmo_over_eps": float(b) / eps,
                     "sup_dphi": sup, "sup_ratio": sup / math.sqrt(1.0 + eps * eps)})
    return rows


# ---------------------------------------------------------------------------
# Whitney cubes and regularized distance


@dataclass(frozen=True)
class WhitneyCube:
    center: tuple
    side: float
    generation: int

    @property
    def diam(self):
        return self.side * math.sqrt(len(self.center))


def _box_distance(cloud_tree, centres, sides):
    """Distance from each axis-aligned cube to the boundary point cloud."""
    n = centres.shape[1]
    half_diag = 0.5 * sides * math.sqrt(n)
    d0 = cloud_tree.query(centres)[0]
    out = np.empty(len(centres))
    lists = cloud_tree.query_ball_point(centres, d0 + half_diag + 1e-15)
    data = cloud_tree.data
    for i, L in enumerate(lists):
        B = data[L]
        e = np.maximum(np.abs(B - centres[i]) - 0.5 * sides[i], 0.0)
        out[i] = np.sqrt(np.min(np.sum(e * e, axis=1)))
    return out


def whitney_decompose(domain, min_side, height=None, focus=None):
    """Dyadic Whitney cubes with diam <= dist(Q, boundary) <= 4 diam.

    Distances are measured to a boundary point cloud of spacing min_side/8.
    For graph domains the cubes live in the slab over one period up to
    ``height`` above min(phi); cubes of the initial tiling that are already
    farther than 4 diameters from the boundary are dropped. With ``focus``
    points, a cube is only split when one of them lies within two diameters
    of it, so the fine levels exist only where they are evaluated.
    """
    n = domain.n
    cloud = domain.boundary_cloud(min_side / 8.0)
    tree = cKDTree(cloud)
    ftree = None
    if focus is not None:
        F = np.atleast_2d(np.asarray(focus, dtype=float)).copy()
        if getattr(domain, "periodic", False) and getattr(domain, "period", None) is not None:
            k = len(domain.period)
            F[:, :k] = domain.origin + np.mod(F[:, :k] - domain.origin, domain.period)
            reps = []
            for sh in np.array(np.meshgrid(*[[-1, 0, 1]] * k, indexing="ij")).reshape(k, -1).T:
                G = F.copy()
                G[:, :k] += sh * domain.period
                reps.append(G)
            F = np.concatenate(reps)
        ftree = cKDTree(F)
    if isinstance(domain, PolygonalDomain2D):
        lo = domain.vertices.min(0)
        L0 = float(np.max(domain.vertices.max(0) - lo))
        centres = (lo + 0.5 * L0)[None, :]
    else:
        L0 = float(np.min(domain.window[:, 1] - domain.window[:, 0]))
        height = 2.0 * L0 if height is None else float(height)
        base = float(domain.phi.min())
        counts = [int(round((w[1] - w[0]) / L0)) for w in domain.window] + [int(math.ceil(height / L0))]
        starts = list(domain.window[:, 0]) + [base]
        grids = np.meshgrid(*[starts[k] + L0 * (np.arange(counts[k]) + 0.5) for k in range(n)], indexing="ij")
        centres = np.stack([g.ravel() for g in grids], axis=1)
    cubes = []
    side, gen = L0, 0
    first = True
    while len(centres) and side >= min_side * (1 - 1e-12):
        sides = np.full(len(centres), side)
        dist = _box_distance(tree, centres, sides)
        diam = side * math.sqrt(n)
        inside = domain.contains(centres)
        ok = inside & (dist >= diam)
        if first:
            ok &= dist <= 4 * diam
        for c in centres[ok]:
            cubes.append(WhitneyCube(tuple(float(v) for v in c), side, gen))
        split = (dist < diam) & (inside | (dist <= 0.5 * diam))
        if ftree is not None and split.any():
            near = ftree.query(centres[split])[0] <= 2.0 * diam
            split[np.flatnonzero(split)[~near]] = False
        parents = centres[split]
        if not len(parents) or side / 2 < min_side * (1 - 1e-12):
            break
        offs = np.array(np.meshgrid(*[[-0.25, 0.25]] * n, indexing="ij")).reshape(n, -1).T * side
        centres = (parents[:, None, :] + offs[None]).reshape(-1, n)
        side, gen, first = side / 2, gen + 1, False
    return cubes


def whitney_overlap(cubes, points, dilation=1.25):
    """Max number of dilated cubes containing any of the points."""
    C = np.array([c.center for c in cubes])
    S = np.array([c.side for c in cubes])
    best = 0
    for s in range(0, len(points), 2048):
        P = points[s:s + 2048]
        inside = np.all(np.abs(P[:, None, :] - C[None]) <= 0.5 * dilation * S[None, :, None], axis=2)
        best = max(best, int(inside.sum(1).max()))
    return best


def _smoothstep(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1, and its derivative."""
    u = np.asarray(u, dtype=float)
    uc = np.clip(u, 1e-12, 1 - 1e-12)
    z = 1.0 / uc - 1.0 / (1.0 - uc)
    S = expit(-z)
    dS = S * (1 - S) * (1.0 / uc ** 2 + 1.0 / (1.0 - uc) ** 2)
    S = np.where(u <= 0, 0.0, np.where(u >= 1, 1.0, S))
    dS = np.where((u <= 0) | (u >= 1), 0.0, dS)
    return S, dS


class RegularizedDistance:
    """Smooth distance: partition of unity over (subdivided) Whitney cubes.

    rho_reg(X) = sum_i psi_i(X) L_i(X) / sum_i psi_i(X), where psi_i is a
    product bump equal to 1 on cube i and supported in its mu-dilate, and
    L_i(X) = rho(c_i) + grad rho(c_i).(X - c_i) is the local affine model of
    the distance at the cube centre. Whitney cubes are split ``subdivide``
    times so that dist/diam >= 4 on the pieces, which keeps rho_reg/rho in a
    band narrower than a factor of 2 (the extension kernel relies on this).
    """

    def __init__(self, domain, min_side, mu=1.25, subdivide=2, height=None, focus=None):
        self.domain = domain
        self.mu = float(mu)
        cubes = whitney_decompose(domain, min_side, height=height, focus=focus)
        if not cubes:
            raise ResolutionError("no Whitney cubes at this resolution")
        n = domain.n
        C = np.array([c.center for c in cubes])
        S = np.array([c.side for c in cubes])
        k = 2 ** subdivide
        offs = (np.array(np.meshgrid(*[np.arange(k)] * n, indexing="ij")).reshape(n, -1).T + 0.5) / k - 0.5
        centres = (C[:, None, :] + offs[None] * S[:, None, None]).reshape(-1, n)
        sides = np.repeat(S / k, len(offs))
        rho_c = domain.distance(centres)
        grad_c = np.empty_like(centres)
        for d in range(n):
            e = np.zeros(n)
            e[d] = 1.0
            st = 1e-3 * rho_c
            grad_c[:, d] = (domain.distance(centres + st[:, None] * e) -
                            domain.distance(centres - st[:, None] * e)) / (2 * st)
        period = getattr(domain, "period", None) if getattr(domain, "periodic", False) else None
        if period is not None:
            kp = len(period)
            shifts = np.array(np.meshgrid(*[[-1, 0, 1]] * kp, indexing="ij")).reshape(kp, -1).T
            reps = []
            for sh in shifts:
                c2 = centres.copy()
                c2[:, :kp] += sh * period
                reps.append(c2)
            m = len(shifts)
            centres = np.concatenate(reps)
            sides, rho_c, grad_c = np.tile(sides, m), np.tile(rho_c, m), np.tile(grad_c, (m, 1))
        self.centres, self.sides, self.rho_c, self.grad_c = centres, sides, rho_c, grad_c
        self.cubes = cubes
        self._tree = cKDTree(self.centres)
        self.min_side = min_side

    def _psi(self, X, idx_pt, idx_cube, grad):
        n = X.shape[1]
        t = (X[idx_pt] - self.centres[idx_cube]) / self.sides[idx_cube, None]
        width = 0.5 * (self.mu - 1.0)
        u = (0.5 * self.mu - np.abs(t)) / width
        g, dg = _smoothstep(u)
        psi = np.prod(g, axis=1)
        if not grad:
            return psi, None
        dpsi = np.empty((len(psi), n))
        for d in range(n):
            others = np.prod(np.delete(g, d, axis=1), axis=1)
            dpsi[:, d] = others * dg[:, d] * (-np.sign(t[:, d]) / width) / self.sides[idx_cube]
        return psi, dpsi

    def evaluate(self, X, grad=True, rho=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if rho is None:
            rho = self.domain.distance(X)
        q = X.copy()
        if getattr(self.domain, "periodic", False) and getattr(self.domain, "period", None) is not None:
            k = len(self.domain.period)
            q[:, :k] = self.domain.origin + np.mod(q[:, :k] - self.domain.origin, self.domain.period)
        lists = self._tree.query_ball_point(q, 0.25 * rho + 1e-14)
        counts = np.array([len(L) for L in lists])
        idx_pt = np.repeat(np.arange(len(X)), counts)
        idx_cube = np.concatenate([np.asarray(L, dtype=int) for L in lists]) if counts.sum() else np.zeros(0, int)
        psi, dpsi = self._psi(q, idx_pt, idx_cube, grad)
        lin = self.rho_c[idx_cube] + np.sum(self.grad_c[idx_cube] * (q[idx_pt] - self.centres[idx_cube]), axis=1)
        den = np.bincount(idx_pt, psi, minlength=len(X))
        num = np.bincount(idx_pt, psi * lin, minlength=len(X))
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.where(den > 0, num / den, np.nan)
        if np.any(~np.isfinite(val)):
            bad = int(np.sum(~np.isfinite(val)))
            raise ResolutionError(f"{bad} point(s) not covered by Whitney cubes; lower min_side")
        if not grad:
            return val, None
        n = X.shape[1]
        g = np.empty((len(X), n))
        for d in range(n):
            dden = np.bincount(idx_pt, dpsi[:, d], minlength=len(X))
            dnum = np.bincount(idx_pt, dpsi[:, d] * lin + psi * self.grad_c[idx_cube, d], minlength=len(X))
            g[:, d] = (dnum - val * dden) / den
        return val, g

    def __call__(self, X):
        return self.evaluate(X, grad=False)[0]


def regularized_distance(domain, X, min_side=None, mu=1.25, fd_step=None):
    """(value, gradient, report) of the regularized distance at points X.

    The report holds the band constants c1 <= rho_reg/rho <= c2 on X and
    the finite-difference check max |D^2 rho_reg| * rho.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(domain.is_interior(X)):
        raise DomainError("regularized distance needs interior points")
    rho = domain.distance(X)
    if min_side is None:
        min_side = 2.0 ** math.floor(math.log2(max(rho.min() / 4.0, 1e-6)))
    rd = RegularizedDistance(domain, min_side, mu=mu)
    val, grad = rd.evaluate(X, rho=rho)
    ratio = val / rho
    step = fd_step if fd_step is not None else 1e-4
    hess = 0.0
    for d in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[d] = 1.0
        hs = step * rho
        gp = rd.evaluate(X + hs[:, None] * e)[1]
        gm = rd.evaluate(X - hs[:, None] * e)[1]
        H = (gp - gm) / (2 * hs[:, None])
        hess = max(hess, float(np.max(np.linalg.norm(H, axis=1) * rho)))
    report = {"c1": float(ratio.min()), "c2": float(ratio.max()),
              "grad_max": float(np.max(np.linalg.norm(grad, axis=1))),
              "hessian_rho_max": hess}
    return val, grad, report
