"""Discrete Dirichlet problems on rectangles.

Q1 Galerkin elements for second-order forms (m = 1) and a finite-difference
fourth-order scheme with ghost nodes for constant-coefficient m = 2
operators. The solution is split as U = E(fdot) + W with W vanishing on the
boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (AssemblyError, CapabilityError, CompatibilityError, ConditioningError,
                     ParameterError, ResolutionError)
from .geometry import PolygonalDomain2D, unit_square
from .spaces import (GridFunction, MultiIndex, NormParams, WhitneyArray, compatibility_check,
                     higher_besov_norm, multi_indices, weighted_sobolev_norm_W)

# ---------------------------------------------------------------------------
# coefficients


def _key(alpha, beta):
    return (tuple(MultiIndex(alpha)), tuple(MultiIndex(beta)))


class CoefficientField:
    """A_{alpha beta}(X) for |alpha|, |beta| <= m, each an l x l matrix field.

    Entries are constants (scalars or l x l arrays) or callables mapping
    points (M, n) to shape (M,) or (M, l, l).
    """

    def __init__(self, entries: Dict, m=1, n=2, l=1):
        self.m, self.n, self.l = int(m), int(n), int(l)
        self.entries = {}
        for (al, be), v in entries.items():
            al, be = MultiIndex(al), MultiIndex(be)
            if len(al) != self.n or len(be) != self.n:
                raise ParameterError("coefficient multi-index has the wrong length")
            if al.order > self.m or be.order > self.m:
                raise ParameterError(f"coefficient pair {al}, {be} exceeds order {self.m}")
            self.entries[(tuple(al), tuple(be))] = v
        if not any(MultiIndex(a).order == self.m and MultiIndex(b).order == self.m
                   for a, b in self.entries):
            raise ParameterError("no top-order coefficient given")

    # constructors

    @classmethod
    def laplacian(cls, n=2, scale=1.0, mass=None):
        """-div(scale grad) (+ mass) as the form sum_k scale d_k U d_k V."""
        ent = {}
        for k in range(n):
            e = [0] * n
            e[k] = 1
            ent[(tuple(e), tuple(e))] = scale
        if mass is not None:
            ent[((0,) * n, (0,) * n)] = mass
        return cls(ent, 1, n)

    @classmethod
    def bilaplacian(cls):
        """Delta^2 written through the form int Delta U Delta V."""
        xx, yy = (2, 0), (0, 2)
        return cls({(xx, xx): 1.0, (yy, yy): 1.0, (xx, yy): 1.0, (yy, xx): 1.0}, 2, 2)

    # evaluation

    def sample(self, X) -> Dict:
        """Values at points X as arrays of shape (M, l, l)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        M = len(X)
        out = {}
        for key, v in self.entries.items():
            val = np.asarray(v(X) if callable(v) else v)
            if val.ndim == 0:
                val = np.broadcast_to(val * np.eye(self.l), (M, self.l, self.l))
            elif val.shape == (self.l, self.l):
                val = np.broadcast_to(val, (M, self.l, self.l))
            elif val.shape == (M,):
                val = val[:, None, None] * np.eye(self.l)[None]
            elif val.shape != (M, self.l, self.l):
                raise AssemblyError(f"coefficient {key} has shape {val.shape}, "
                                    f"expected ({M},) or ({M}, {self.l}, {self.l})")
            out[key] = val
        return out

    def kappa1(self, X) -> float:
        """sum over pairs of the sampled sup of the spectral norm."""
        tot = 0.0
        for val in self.sample(X).values():
            tot += float(np.max(np.linalg.norm(val, ord=2, axis=(1, 2))))
        return tot

    def is_constant(self, X, tol=1e-14) -> bool:
        for val in self.sample(X).values():
            if np.max(np.abs(val - val[:1])) > tol * max(1.0, float(np.max(np.abs(val)))):
                return False
        return True

    def mean(self, X, weights=None) -> "CoefficientField":
        """Coefficients frozen at their (weighted) mean over the points X."""
        S = self.sample(X)
        w = np.ones(len(np.atleast_2d(X))) if weights is None else np.asarray(weights, float)
        ent = {k: np.tensordot(w, v, axes=(0, 0)) / w.sum() for k, v in S.items()}
        return CoefficientField(ent, self.m, self.n, self.l)

    def scaled(self, c) -> "CoefficientField":
        ent = {}
        for k, v in self.entries.items():
            ent[k] = (lambda X, v=v: c * np.asarray(v(X))) if callable(v) else c * np.asarray(v)
        return CoefficientField(ent, self.m, self.n, self.l)

    def with_lower_order(self, extra: Dict) -> "CoefficientField":
        ent = dict(self.entries)
        for (al, be), v in extra.items():
            if MultiIndex(al).order == self.m and MultiIndex(be).order == self.m:
                raise ParameterError("lower-order terms must have |alpha| + |beta| < 2m")
            ent[_key(al, be)] = v
        return CoefficientField(ent, self.m, self.n, self.l)


def oscillating_coefficient(amplitude, waves=3, l=1):
    """(1 + amplitude cos(2 pi k x) cos(2 pi k y)) times the Laplacian pattern."""
    def a(X):
        return 1.0 + amplitude * np.cos(2 * np.pi * waves * X[:, 0]) * np.cos(2 * np.pi * waves * X[:, 1])
    return CoefficientField.laplacian(2, scale=a) if l == 1 else CoefficientField(
        {((1, 0), (1, 0)): lambda X: a(X)[:, None, None] * np.eye(l),
         ((0, 1), (0, 1)): lambda X: a(X)[:, None, None] * np.eye(l)}, 1, 2, l)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class TensorGrid:
    """Uniform node grid on [lo, hi] with nx x ny cells; nodes in ij order."""

    lo: tuple
    hi: tuple
    nx: int
    ny: int

    @classmethod
    def for_domain(cls, domain, h):
        if not isinstance(domain, PolygonalDomain2D) or len(domain.vertices) != 4:
            raise AssemblyError("the solver needs an axis-aligned rectangle")
        V = domain.vertices
        lo, hi = V.min(0), V.max(0)
        corners = {(float(a), float(b)) for a in (lo[0], hi[0]) for b in (lo[1], hi[1])}
        if {(float(a), float(b)) for a, b in V} != corners:
            raise AssemblyError("the polygon is not an axis-aligned rectangle")
        counts = []
        for k in range(2):
            c = (hi[k] - lo[k]) / float(h)
            if abs(c - round(c)) > 1e-8 or round(c) < 2:
                raise AssemblyError(f"mesh width {h} does not divide side {hi[k] - lo[k]}")
            counts.append(int(round(c)))
        return cls(tuple(lo), tuple(hi), counts[0], counts[1])

    @property
    def hx(self):
        return (self.hi[0] - self.lo[0]) / self.nx

    @property
    def hy(self):
        return (self.hi[1] - self.lo[1]) / self.ny

    @property
    def shape(self):
        return (self.nx + 1, self.ny + 1)

    @property
    def size(self):
        return (self.nx + 1) * (self.ny + 1)

    def coords(self):
        x = self.lo[0] + self.hx * np.arange(self.nx + 1)
        y = self.lo[1] + self.hy * np.arange(self.ny + 1)
        return x, y

    def points(self):
        x, y = self.coords()
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def boundary_mask(self):
        b = np.zeros(self.shape, dtype=bool)
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
        return b.ravel()

    def cell_nodes(self):
        """(ncell, 4) node indices in the local order (0,0), (1,0), (0,1), (1,1)."""
        I, J = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        I, J = I.ravel(), J.ravel()
        ny1 = self.ny + 1
        return np.stack([I * ny1 + J, (I + 1) * ny1 + J, I * ny1 + J + 1,
                         (I + 1) * ny1 + J + 1], axis=1)

    def cell_grid(self):
        """The matching CellGrid (cell centres) used for norms."""
        from .geometry import CellGrid
        x, y = self.coords()
        return CellGrid.from_edges([x, y])


_GAUSS = 0.5 + np.array([-0.5, 0.5]) / math.sqrt(3.0)
_LOCAL = np.array([(0, 0), (1, 0), (0, 1), (1, 1)])


def _reference_basis():
    """Q1 basis values and reference derivatives at the 2 x 2 Gauss points."""
    xi, eta = np.meshgrid(_GAUSS, _GAUSS, indexing="ij")
    xi, eta = xi.ravel(), eta.ravel()
    B0 = np.empty((4, 4))
    Bx = np.empty((4, 4))
    By = np.empty((4, 4))
    for a, (i, j) in enumerate(_LOCAL):
        fx = xi if i else 1 - xi
        fy = eta if j else 1 - eta
        dfx = np.ones_like(xi) if i else -np.ones_like(xi)
        dfy = np.ones_like(eta) if j else -np.ones_like(eta)
        B0[:, a] = fx * fy
        Bx[:, a] = dfx * fy
        By[:, a] = fx * dfy
    return np.stack([xi, eta], axis=1), B0, Bx, By


def gauss_points(grid: TensorGrid):
    """Physical Gauss points, shape (ncell, 4, 2), and the weight per point."""
    ref, *_ = _reference_basis()
    x, y = grid.coords()
    cn = grid.cell_nodes()
    P = grid.points()[cn[:, 0]]
    pts = P[:, None, :] + ref[None] * np.array([grid.hx, grid.hy])
    return pts, 0.25 * grid.hx * grid.hy


def _basis_for(alpha, grid):
    _, B0, Bx, By = _reference_basis()
    al = tuple(alpha)
    if al == (0, 0):
        return B0
    if al == (1, 0):
        return Bx / grid.hx
    if al == (0, 1):
        return By / grid.hy
    raise CapabilityError(f"Q1 elements carry derivatives of order <= 1, not {al}")


def _form_factor(alpha, beta):
    """(-i)^{|beta|} i^{|alpha|} from D = -i d on U and its conjugate on V."""
    return (-1j) ** MultiIndex(beta).order * (1j) ** MultiIndex(alpha).order


@dataclass
class DiscreteForm:
    """Matrix of L(U, V) = sum int <A D^beta U, D^alpha V> on nodal vectors.

    ``matrix[r, c]`` pairs test function r (alpha side) with trial c.
    """

    grid: TensorGrid
    matrix: sp.csr_matrix
    l: int
    coeffs: CoefficientField
    mass: Optional[sp.csr_matrix] = None

    def __call__(self, u, v):
        """L(u, v) = v^H K u."""
        return complex(np.vdot(v, self.matrix @ u))

    @property
    def hermitian(self) -> bool:
        K = self.matrix
        d = K - K.conj().T
        return d.nnz == 0 or float(abs(d).max()) <= 1e-12 * float(abs(K).max())

    def hermitian_part(self):
        K = self.matrix
        return ((K + K.conj().T) * 0.5).tocsr()

    def dofs(self, node_mask):
        return np.repeat(node_mask, self.l)

    def load(self, F):
        """Right-hand side int <F, phi_r> for F callable, or nodal values (mass pairing)."""
        g = self.grid
        l = self.l
        if F is None:
            return np.zeros(g.size * l)
        if callable(F):
            pts, w = gauss_points(g)
            vals = np.asarray(F(pts.reshape(-1, 2)))
            vals = vals.reshape(pts.shape[0], 4, -1)
            _, B0, _, _ = _reference_basis()
            loc = w * np.einsum("qa,cqi->cai", B0, vals)
            cn = g.cell_nodes()
            dof = (cn[:, :, None] * l + np.arange(l)[None, None]).ravel()
            b = np.bincount(dof, loc.real.ravel(), minlength=g.size * l).astype(complex)
            if np.iscomplexobj(loc):
                b += 1j * np.bincount(dof, loc.imag.ravel(), minlength=g.size * l)
            return b if np.iscomplexobj(vals) else b.real
        F = np.asarray(F).reshape(-1)
        if F.shape[0] != g.size * l:
            raise AssemblyError("nodal right-hand side does not match the grid")
        return self.mass @ F


def assemble_form(coeffs: CoefficientField, domain, m=1, h=None, grid: Optional[TensorGrid] = None):
    """Q1 Galerkin matrix of the sesquilinear form (m = 1) on a rectangle.

    Coefficients are sampled at the 2 x 2 Gauss points of every cell.
    """
    if m != coeffs.m:
        raise AssemblyError(f"order {m} differs from the coefficient order {coeffs.m}")
    if m != 1:
        raise CapabilityError("Galerkin assembly is implemented for m = 1; "
                              "use fourth_order_operator for m = 2")
    if coeffs.n != 2:
        raise CapabilityError("assembly is implemented in two dimensions")
    if grid is None:
        grid = TensorGrid.for_domain(domain, domain.h if h is None else h)
    l = coeffs.l
    pts, w = gauss_points(grid)
    S = coeffs.sample(pts.reshape(-1, 2))
    cn = grid.cell_nodes()
    nc = len(cn)
    dtype = float
    blocks = []
    for (al, be), val in S.items():
        fac = _form_factor(al, be)
        val = np.asarray(val).reshape(nc, 4, l, l)
        Ba = _basis_for(al, grid)
        Bb = _basis_for(be, grid)
        # E[c, r, i, t, j] = w sum_q A_ij(c, q) Ba[q, r] Bb[q, t]
        E = w * fac * np.einsum("cqij,qr,qt->critj", val, Ba, Bb)
        if np.iscomplexobj(E) and np.max(np.abs(E.imag)) > 0:
            dtype = complex
        blocks.append(E)
    E = sum(blocks)
    if dtype is float:
        E = E.real
    dof = cn[:, :, None] * l + np.arange(l)[None, None]  # (c, r, i)
    R = np.broadcast_to(dof[:, :, :, None, None], E.shape).ravel()
    C = np.broadcast_to(dof[:, None, None, :, :], E.shape).ravel()
    N = grid.size * l
    K = sp.coo_matrix((E.ravel(), (R, C)), shape=(N, N)).tocsr()
    K.sum_duplicates()
    # consistent mass for nodal right-hand sides
    _, B0, _, _ = _reference_basis()
    Me = w * np.einsum("qr,qt->rt", B0, B0)
    Mr = np.broadcast_to(cn[:, :, None], (nc, 4, 4))
    Mc = np.broadcast_to(cn[:, None, :], (nc, 4, 4))
    M = sp.coo_matrix((np.broadcast_to(Me, (nc, 4, 4)).ravel(), (Mr.ravel(), Mc.ravel())),
                      shape=(grid.size, grid.size)).tocsr()
    if l > 1:
        M = sp.kron(M, sp.identity(l)).tocsr()
    return DiscreteForm(grid, K, l, coeffs, M)


# ---------------------------------------------------------------------------
# linear solves


def _solve(A, b, tol=1e-10, method="auto", maxiter=20000):
    """CG for Hermitian positive systems, preconditioned GMRES otherwise."""
    bn = float(np.linalg.norm(b))
    if bn == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residual": 0.0, "method": "none"}
    herm = (A - A.conj().T)
    herm = herm.nnz == 0 or float(abs(herm).max()) <= 1e-12 * float(abs(A).max())
    diag = A.diagonal()
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b)
        used = "direct"
        its = 1
    elif herm and np.all(diag.real > 0) and method in ("auto", "cg"):
        count = [0]

        def cb(_):
            count[0] += 1

        Minv = sp.diags(1.0 / diag)
        x, info = spla.cg(A, b, rtol=tol * 0.1, atol=0.0, maxiter=maxiter, M=Minv, callback=cb)
        used, its = "cg", count[0]
    else:
        count = [0]

        def cb(_):
            count[0] += 1

        ilu = spla.spilu(A.tocsc().astype(complex), drop_tol=1e-5, fill_factor=20)
        P = spla.LinearOperator(A.shape, ilu.solve, dtype=complex)
        x, info = spla.gmres(A.astype(complex), b.astype(complex), rtol=tol * 0.1, atol=0.0,
                             restart=200, maxiter=maxiter, M=P, callback=cb,
                             callback_type="pr_norm")
        used, its = "gmres", count[0]
    res = float(np.linalg.norm(A @ x - b)) / bn
    diag_info = {"iterations": its, "residual": res, "method": used}
    if not np.isfinite(res) or res > tol:
        raise ConditioningError(f"{used} stagnated at relative residual {res:.3g}", diag_info)
    return x, diag_info


# ---------------------------------------------------------------------------
# problems


@dataclass
class DirichletProblem:
    """Data of sum D^alpha (A D^beta U) = F with Dirichlet data of order m - 1.

    ``data`` is a WhitneyArray, a field ``field(alpha, points)`` giving
    boundary values of derivatives, or None (zero data). Normal data
    {g_k} are passed through ``normal_data`` (list of boundary arrays on
    ``bgrid``) and converted with the compatibility relations.
    """

    domain: object
    coeffs: CoefficientField
    m: int = 1
    F: Optional[object] = None
    data: Optional[object] = None
    normal_data: Optional[list] = None
    bgrid: Optional[object] = None

    def __post_init__(self):
        if self.m != self.coeffs.m:
            raise ParameterError("problem order differs from the coefficient order")
        if self.normal_data is not None:
            from .extenders import normal_data_map, reconstruct_from_normal_data
            if self.bgrid is None:
                raise ParameterError("normal data need the boundary grid they live on")
            fdot = reconstruct_from_normal_data(self.normal_data, self.bgrid, self.m)
            rep = compatibility_check(fdot)
            back = normal_data_map(fdot)
            scale = max(1.0, max(float(np.max(np.abs(g))) for g in self.normal_data))
            mis = max(float(np.max(np.abs(b - g))) for b, g in zip(back, self.normal_data))
            if not rep["compatible"] or mis > rep.get("tol", 8 * self.bgrid.h) * scale:
                raise CompatibilityError(
                    "no compatible Whitney array reproduces the normal data "
                    f"(residual {max(mis, rep['max_residual']):.3g}); the problem "
                    "has a solution only for data coming from some fdot")
            self.data = fdot

    def whitney(self, h) -> WhitneyArray:
        bg = self.bgrid if self.bgrid is not None else self.domain.boundary_grid(h / 4)
        if isinstance(self.data, WhitneyArray):
            return self.data
        if self.data is None:
            return WhitneyArray(bg, self.m, {tuple(a): np.zeros(len(bg))
                                             for a in multi_indices(2, self.m - 1)})
        return WhitneyArray.from_field(bg, self.m, self.data)


def _perimeter_param(domain, P):
    """Arclength of boundary points, matching ``BoundaryGrid.param`` of polygons."""
    from .geometry import _segment_distance
    d = _segment_distance(P, domain.starts, domain.ends)
    e = np.argmin(d, axis=1)
    s0 = np.concatenate([[0.0], np.cumsum(domain.lengths)[:-1]])
    return s0[e] + np.linalg.norm(P - domain.starts[e], axis=1)


def boundary_values(problem: DirichletProblem, grid: TensorGrid, fdot: WhitneyArray):
    """f_0 at the boundary nodes: exact for fields, periodic interpolation otherwise."""
    P = grid.points()[grid.boundary_mask()]
    if problem.data is not None and not isinstance(problem.data, WhitneyArray):
        return np.asarray(problem.data((0, 0), P))
    bg = fdot.bgrid
    s = _perimeter_param(problem.domain, P)
    order = np.argsort(bg.param)
    f0 = np.asarray(fdot[(0, 0)])[order]
    per = problem.domain.perimeter
    if np.iscomplexobj(f0):
        return (np.interp(s, bg.param[order], f0.real, period=per)
                + 1j * np.interp(s, bg.param[order], f0.imag, period=per))
    return np.interp(s, bg.param[order], f0, period=per)


def _lift(problem, grid, fdot, bvals, lift):
    """Nodal E(fdot): the extension inside, the boundary data on the boundary."""
    L = np.zeros(grid.size, dtype=np.result_type(bvals, float))
    bm = grid.boundary_mask()
    L[bm] = bvals
    if lift == "zero" or not np.any(np.abs(bvals) > 0):
        return L
    from .extenders import BoundaryExtension
    pts = grid.points()[~bm]
    rho = problem.domain.distance(pts)
    side = 2.0 ** math.floor(math.log2(float(rho.min()) / 4.0))
    ext = BoundaryExtension(problem.domain, fdot.bgrid, min_side=side, focus=pts)
    L[~bm] = ext.apply(fdot, pts, derivatives=False)
    return L


def nodal_to_grid_function(domain, grid: TensorGrid, u) -> GridFunction:
    """Q1 function sampled at cell centres with its exact first derivatives."""
    U = np.asarray(u).reshape(grid.shape)
    c = 0.25 * (U[:-1, :-1] + U[1:, :-1] + U[:-1, 1:] + U[1:, 1:])
    dx = 0.5 * ((U[1:, :-1] + U[1:, 1:]) - (U[:-1, :-1] + U[:-1, 1:])) / grid.hx
    dy = 0.5 * ((U[:-1, 1:] + U[1:, 1:]) - (U[:-1, :-1] + U[1:, :-1])) / grid.hy
    return GridFunction(domain, grid.cell_grid(), c, order=1,
                        derivatives={(1, 0): dx, (0, 1): dy})


def solve_homogeneous(problem: DirichletProblem, h, rhs=None, form=None, tol=1e-10,
                      method="auto"):
    """W with zero trace solving L(W, V) = <F, V> - <rhs correction> for V in the trial space.

    ``rhs`` replaces the load vector when given (full nodal dof vector).
    Returns (W nodal vector, form, solver info).
    """
    if problem.m != 1:
        raise CapabilityError("the Galerkin solver handles m = 1; see fourth_order_solve")
    if form is None:
        form = assemble_form(problem.coeffs, problem.domain, 1, h)
    grid = form.grid
    b = form.load(problem.F) if rhs is None else rhs
    interior = ~form.dofs(grid.boundary_mask())
    A = form.matrix[interior][:, interior]
    w, info = _solve(A.tocsr(), b[interior], tol=tol, method=method)
    W = np.zeros(grid.size * form.l, dtype=np.result_type(w, b))
    W[interior] = w
    return W, form, info


def _f_proxy(problem, grid, params):
    """(int |F|^p rho^{p(a+m)})^{1/p} at cell centres, a stand-in for the dual norm."""
    if problem.F is None:
        return 0.0
    cg = grid.cell_grid()
    pts = cg.all_points()
    if callable(problem.F):
        vals = np.asarray(problem.F(pts))
    else:
        Fn = np.asarray(problem.F).reshape(grid.shape)
        vals = 0.25 * (Fn[:-1, :-1] + Fn[1:, :-1] + Fn[:-1, 1:] + Fn[1:, 1:]).ravel()
    G = GridFunction(problem.domain, cg, np.abs(vals).reshape(cg.shape), order=0)
    q = params.p * (params.a + params.m)
    return G.integrate(np.abs(G.values) ** params.p, q) ** (1.0 / params.p)


def solve_dirichlet(problem: DirichletProblem, params: Optional[NormParams] = None, h=None,
                    lift="extension", norm_params=(), tol=1e-10, form=None):
    """U = E(fdot) + W on a tensor grid of width h.

    Returns (U nodal vector, diagnostics). Diagnostics carry the weighted
    norm of U, sum of the Besov norms of the data, the F proxy and their
    ratio for ``params`` and for every entry of ``norm_params``.
    """
    if params is not None and not isinstance(params, NormParams):
        raise ParameterError("params must be a NormParams instance")
    if problem.m == 2:
        return fourth_order_solve(problem, h)
    h = problem.domain.h if h is None else float(h)
    grid = TensorGrid.for_domain(problem.domain, h)
    fdot = problem.whitney(h)
    if problem.m >= 2:
        rep = compatibility_check(fdot)
        if not rep["compatible"]:
            raise CompatibilityError("boundary data are not a compatible Whitney array")
    if form is None:
        form = assemble_form(problem.coeffs, problem.domain, 1, grid=grid)
    if form.l != 1:
        raise CapabilityError("Dirichlet data lifting is implemented for scalar problems")
    bvals = boundary_values(problem, grid, fdot)
    L = _lift(problem, grid, fdot, bvals, lift)
    b = form.load(problem.F) - form.matrix @ L
    W, _, info = solve_homogeneous(problem, h, rhs=b, form=form, tol=tol)
    U = L + W
    diag = {"h": h, "solver": info, "lift": lift}
    plist = ([params] if params is not None else []) + list(norm_params)
    if plist:
        G = nodal_to_grid_function(problem.domain, grid, U)
        diag["norms"] = []
        for pr in plist:
            un = weighted_sobolev_norm_W(G, NormParams(pr.p, pr.a, 1))
            bn = higher_besov_norm(fdot, pr.p, pr.s)
            fn = _f_proxy(problem, grid, NormParams(pr.p, pr.a, 1))
            den = bn + fn
            diag["norms"].append({"p": pr.p, "s": pr.s, "a": pr.a, "U_norm": un,
                                  "data_norm": bn, "F_norm": fn,
                                  "ratio": un / den if den > 0 else math.nan})
        if params is not None:
            diag.update(diag["norms"][0])
    return U, diag


def estimate_kappa0(form: DiscreteForm, sigma=0.0):
    """Smallest eigenvalue of Re L relative to the top-order seminorm on zero-trace functions.

    Shift-invert Lanczos (eigsh) on the generalised pencil (H, K_top), with
    K_top the Q1 Dirichlet form of sum_{|gamma| = 1} |d^gamma u|^2.
    """
    grid = form.grid
    lap = assemble_form(CoefficientField(
        {(a, a): np.eye(form.l) for a in [(1, 0), (0, 1)]}, 1, 2, form.l), None, grid=grid)
    inter = ~form.dofs(grid.boundary_mask())
    H = form.hermitian_part()[inter][:, inter].real.tocsc()
    Kt = lap.matrix[inter][:, inter].tocsc()
    if H.shape[0] <= 40:
        from scipy.linalg import eigh
        return float(eigh(H.toarray(), Kt.toarray(), eigvals_only=True)[0])
    vals = spla.eigsh(H, k=1, M=Kt, sigma=sigma, which="LM", return_eigenvectors=False)
    return float(vals[0])


# ---------------------------------------------------------------------------
# trace equivalence


def trace_equivalence_check(coeffs, domain, params: NormParams, samples, h=None, rng=None,
                            terms=3):
    """Ratios sum ||Tr D^alpha U||_B / ||U||_W over discrete null solutions.

    Each sample solves L U = 0 with random trigonometric Dirichlet data.
    """
    from .spaces import TrigField
    rng = np.random.default_rng(rng)
    h = domain.h if h is None else h
    form = assemble_form(coeffs, domain, 1, h)
    ratios = []
    for _ in range(int(samples)):
        T = TrigField.random(2, rng, terms=terms)
        prob = DirichletProblem(domain, coeffs, 1, data=T)
        U, diag = solve_dirichlet(prob, params, h, form=form)
        if diag["U_norm"] == 0:
            continue
        ratios.append(diag["data_norm"] / diag["U_norm"])
    ratios = np.array(ratios)
    return {"min": float(ratios.min()), "max": float(ratios.max()), "ratios": ratios}


# ---------------------------------------------------------------------------
# frozen coefficients


@dataclass
class IterationResult:
    iterates: list
    updates: np.ndarray
    q: float
    converged: bool
    direct: Optional[np.ndarray] = None
    diverged: bool = False

    @property
    def error_vs_direct(self):
        if self.direct is None:
            return math.nan
        u = self.iterates[-1]
        return float(np.max(np.abs(u - self.direct)) / max(np.max(np.abs(self.direct)), 1e-300))


def frozen_coefficient_iteration(problem: DirichletProblem, h, max_iter=200, tol=1e-13,
                                 direct=True):
    """u_{k+1} = u_k - G0 (L u_k - f), G0 the exact solver of the mean-frozen operator.

    Works on zero-trace functions. q is the geometric mean contraction of
    the update norms over the final iterations; q >= 1 is reported as
    divergence.
    """
    grid = TensorGrid.for_domain(problem.domain, h)
    form = assemble_form(problem.coeffs, problem.domain, 1, grid=grid)
    pts, w = gauss_points(grid)
    frozen = problem.coeffs.mean(pts.reshape(-1, 2))
    form0 = assemble_form(frozen, problem.domain, 1, grid=grid)
    inter = ~form.dofs(grid.boundary_mask())
    A = form.matrix[inter][:, inter].tocsc()
    A0 = form0.matrix[inter][:, inter].tocsc()
    f = form.load(problem.F)[inter]
    lu = spla.splu(A0)
    u = np.zeros(A.shape[0], dtype=np.result_type(A.dtype, f))
    iterates = [u]
    upd = []
    scale = None
    converged = diverged = False
    for _ in range(int(max_iter)):
        r = A @ u - f
        du = lu.solve(r)
        u = u - du
        iterates.append(u)
        nrm = float(np.linalg.norm(du))
        upd.append(nrm)
        scale = scale or max(nrm, 1e-300)
        if nrm <= tol * scale:
            converged = True
            break
        if not np.isfinite(nrm) or nrm > 1e8 * scale:
            diverged = True
            break
    upd = np.array(upd)
    if len(upd) < 2 or upd[1] == 0.0:
        q = 0.0
    else:
        tail = upd[upd > 0]
        k = min(len(tail) - 1, 10)
        q = float((tail[-1] / tail[-1 - k]) ** (1.0 / k)) if k > 0 else 0.0
    if q >= 1.0:
        diverged = True
    ref = lu_direct = None
    if direct:
        lu_direct = spla.splu(A).solve(f)
    return IterationResult(iterates, upd, q, converged, lu_direct, diverged)


def contraction_factor(problem: DirichletProblem, h, **kw) -> float:
    return frozen_coefficient_iteration(problem, h, **kw).q


# ---------------------------------------------------------------------------
# Fredholm demo


def fredholm_lower_order_demo(coeffs: CoefficientField, domain=None, h=1 / 16, gap=0.1,
                              samples=5, rng=None):
    """Kernel and cokernel dimensions of the discrete operator with lower-order terms.

    The zero-trace matrix is normalised by the lumped mass; the numerical
    kernel is the set of smallest singular values separated from the next
    one by a factor below ``gap``. The estimate compares ||U||_{W^1_2} with
    ||F|| plus the L_2 norm of U on random solutions.
    """
    domain = unit_square(h) if domain is None else domain
    form = assemble_form(coeffs, domain, 1, h)
    grid = form.grid
    inter = ~form.dofs(grid.boundary_mask())
    A = form.matrix[inter][:, inter].toarray()
    lump = np.asarray(form.mass.sum(axis=1)).ravel()[inter]
    D = 1.0 / np.sqrt(lump)
    An = D[:, None] * A * D[None, :]

    def null_dim(Mt):
        sv = np.linalg.svd(Mt, compute_uv=False)[::-1]
        k = 0
        for i in range(min(len(sv) - 1, 8)):
            if sv[i] < gap * sv[i + 1]:
                k = i + 1
        return k, sv

    ker, sv = null_dim(An)
    coker, _ = null_dim(An.conj().T)
    rng = np.random.default_rng(rng)
    ratios = []
    if ker == 0:
        for _ in range(int(samples)):
            u = rng.standard_normal(A.shape[0])
            f = A @ u
            G = nodal_to_grid_function(domain, grid, _embed(grid, inter, u))
            pr = NormParams(2.0, 0.0, 1)
            wn = weighted_sobolev_norm_W(G, pr)
            l2 = math.sqrt(G.integrate(np.abs(G.values) ** 2))
            fn = math.sqrt(float(np.sum(np.abs(f) ** 2 / lump)))
            ratios.append(wn / (fn + l2))
    return {"kernel": ker, "cokernel": coker, "index": ker - coker,
            "singular_values": sv[:8], "estimate_ratios": np.array(ratios)}


def _embed(grid, inter, u):
    full = np.zeros(grid.size, dtype=np.asarray(u).dtype)
    full[inter] = u
    return full


# ---------------------------------------------------------------------------
# fourth order


_STENCIL_1D = {0: {0: 1.0}, 1: {-1: -0.5, 1: 0.5}, 2: {-1: 1.0, 0: -2.0, 1: 1.0},
               3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5}, 4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0}}


def _operator_stencil(coeffs: CoefficientField):
    """Stencil of sum A_{alpha beta} d^{alpha + beta} (times h^4) for constant A, hx = hy."""
    X = np.zeros((1, 2))
    S = coeffs.sample(X)
    st = {}
    for (al, be), v in S.items():
        if MultiIndex(al).order != 2 or MultiIndex(be).order != 2:
            raise CapabilityError("the fourth-order scheme takes top-order coefficients only")
        c = complex(v[0, 0, 0])
        g = MultiIndex(al) + MultiIndex(be)
        for dx, wx in _STENCIL_1D[g[0]].items():
            for dy, wy in _STENCIL_1D[g[1]].items():
                st[(dx, dy)] = st.get((dx, dy), 0.0) + c * wx * wy
    if all(abs(v.imag) == 0 for v in st.values()):
        st = {k: v.real for k, v in st.items()}
    return {k: v for k, v in st.items() if v != 0}


def fourth_order_solve(problem: DirichletProblem, h, normal=None):
    """Constant-coefficient m = 2 problem on a rectangle with clamped data.

    Unknowns are interior nodal values; boundary values are g_0 and ghost
    nodes, one layer outside, carry the outward normal derivative g_1
    through u_ghost = u_mirror + 2 h g_1 (once per reflected axis).
    ``problem.data`` is (g0, g1): constants or callables of boundary points.
    Returns (nodal array of shape grid.shape, diagnostics).
    """
    if problem.m != 2:
        raise ParameterError("fourth_order_solve needs m = 2")
    if problem.coeffs.l != 1:
        raise CapabilityError("the fourth-order scheme is scalar")
    grid = TensorGrid.for_domain(problem.domain, h)
    if abs(grid.hx - grid.hy) > 1e-12 * grid.hx:
        raise AssemblyError("the fourth-order scheme needs square cells")
    X = np.random.default_rng(0).uniform(0, 1, (16, 2))
    if not problem.coeffs.is_constant(X):
        raise CapabilityError("the fourth-order scheme needs constant coefficients")
    st = _operator_stencil(problem.coeffs)
    hh = grid.hx
    nx, ny = grid.nx, grid.ny
    x, y = grid.coords()
    data = problem.data if problem.data is not None else (0.0, 0.0)
    if isinstance(data, WhitneyArray):
        raise CapabilityError("give clamped data as (g0, g1) for the fourth-order scheme")
    g0, g1 = data

    def ev(g, P):
        return np.asarray(g(P), dtype=float) * np.ones(len(P)) if callable(g) else np.full(len(P), float(g))

    ni = nx - 1
    nj = ny - 1
    idx = lambda i, j: (i - 1) * nj + (j - 1)
    rows, cols, vals = [], [], []
    rhs = np.zeros(ni * nj, dtype=complex if any(isinstance(v, complex) for v in st.values()) else float)
    F = problem.F
    if F is not None:
        P = np.stack(np.meshgrid(x[1:-1], y[1:-1], indexing="ij"), -1).reshape(-1, 2)
        rhs += (np.asarray(F(P)) if callable(F) else np.asarray(F)[1:-1, 1:-1].ravel()) * hh ** 4

    def reflect(a, n):
        if a < 0:
            return -a, True
        if a > n:
            return 2 * n - a, True
        return a, False

    for i in range(1, nx):
        for j in range(1, ny):
            r = idx(i, j)
            for (di, dj), w in st.items():
                a, b = i + di, j + dj
                a2, fa = reflect(a, nx)
                b2, fb = reflect(b, ny)
                shift = 0.0
                if fa:
                    side = np.array([[x[0] if a < 0 else x[-1], y[min(max(b2, 0), ny)]]])
                    shift += abs(a - a2) * hh * ev(g1, side)[0]
                if fb:
                    side = np.array([[x[min(max(a2, 0), nx)], y[0] if b < 0 else y[-1]]])
                    shift += abs(b - b2) * hh * ev(g1, side)[0]
                rhs[r] -= w * shift
                if a2 in (0, nx) or b2 in (0, ny):
                    rhs[r] -= w * ev(g0, np.array([[x[a2], y[b2]]]))[0]
                    continue
                rows.append(r)
                cols.append(idx(a2, b2))
                vals.append(w)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(ni * nj, ni * nj))
    u = spla.spsolve(A.tocsc(), rhs)
    U = np.zeros(grid.shape, dtype=u.dtype)
    U[1:-1, 1:-1] = u.reshape(ni, nj)
    Pb = grid.points()[grid.boundary_mask()]
    U.ravel()[grid.boundary_mask()] = ev(g0, Pb)
    return U, {"h": hh, "grid": grid, "stencil": st, "g1": g1}


def _ghosted(U, hh, g1):
    """U padded with one ghost layer from the clamped condition (constant g1)."""
    V = np.pad(U, 1)
    V[0, 1:-1] = U[1, :] + 2 * hh * g1
    V[-1, 1:-1] = U[-2, :] + 2 * hh * g1
    V[1:-1, 0] = U[:, 1] + 2 * hh * g1
    V[1:-1, -1] = U[:, -2] + 2 * hh * g1
    V[0, 0] = V[2, 2] + 4 * hh * g1
    V[0, -1] = V[2, -3] + 4 * hh * g1
    V[-1, 0] = V[-3, 2] + 4 * hh * g1
    V[-1, -1] = V[-3, -3] + 4 * hh * g1
    return V


def w22_seminorm(U, hh, g1=0.0):
    """(sum_nodes w (u_xx^2 + 2 u_xy^2 + u_yy^2))^{1/2} with trapezoid weights."""
    V = _ghosted(np.asarray(U, dtype=float), hh, float(g1))
    uxx = (V[2:, 1:-1] - 2 * V[1:-1, 1:-1] + V[:-2, 1:-1]) / hh ** 2
    uyy = (V[1:-1, 2:] - 2 * V[1:-1, 1:-1] + V[1:-1, :-2]) / hh ** 2
    uxy = (V[2:, 2:] - V[2:, :-2] - V[:-2, 2:] + V[:-2, :-2]) / (4 * hh ** 2)
    wx = np.full(U.shape[0], hh)
    wx[[0, -1]] *= 0.5
    wy = np.full(U.shape[1], hh)
    wy[[0, -1]] *= 0.5
    W = wx[:, None] * wy[None, :]
    return math.sqrt(float(np.sum(W * (uxx ** 2 + 2 * uxy ** 2 + uyy ** 2))))


def corner_profile(omega):
    """Theta(omega) = (omega - pi/2) sin(omega) - omega cos(omega)."""
    w = np.asarray(omega, dtype=float)
    return (w - np.pi / 2) * np.sin(w) - w * np.cos(w)


def corner_profile_derivative(omega):
    w = np.asarray(omega, dtype=float)
    return np.sin(w) + (w - np.pi / 2) * np.cos(w) - np.cos(w) + w * np.sin(w)


CORNER_TARGET = 2.0 / (np.pi + 2.0)


def fit_corner_amplitude(U, hh, r_lo=None, r_hi=0.1, max_residual=0.5):
    """Least-squares c in U ~ c r Theta(omega) over the annulus r in [2h, r_hi]."""
    N = U.shape[0] - 1
    x = hh * np.arange(N + 1)
    X, Y = np.meshgrid(x, x[: U.shape[1]], indexing="ij")
    r = np.hypot(X, Y)
    w = np.arctan2(Y, X)
    r_lo = 2 * hh if r_lo is None else r_lo
    sel = (r >= r_lo) & (r <= r_hi) & (X > 0) & (Y > 0)
    if sel.sum() < 4:
        raise ResolutionError(f"mesh too coarse: {int(sel.sum())} nodes in the fitting annulus")
    b = r[sel] * corner_profile(w[sel])
    c = float(U[sel] @ b / (b @ b))
    res = float(np.linalg.norm(U[sel] - c * b) / max(np.linalg.norm(U[sel]), 1e-300))
    if res > max_residual:
        raise ResolutionError(f"mesh too coarse: corner fit residual {res:.3g}")
    return c, res


def biharmonic_corner_demo(ladder=(32, 64, 128), g1=1.0, r_hi=0.1):
    """Clamped plate on the unit square with u = 0 and outward normal derivative g1.

    Returns rows (h, c_fit, W22 seminorm, fit residual) and the fit
    gamma of the seminorm against sqrt(log(1/h)).
    """
    rows = []
    for N in ladder:
        h = 1.0 / N
        prob = DirichletProblem(unit_square(h), CoefficientField.bilaplacian(), 2, data=(0.0, g1))
        U, _ = fourth_order_solve(prob, h)
        c, res = fit_corner_amplitude(U, h, r_hi=r_hi)
        rows.append({"h": h, "c_fit": c / g1, "W22_seminorm": w22_seminorm(U, h, g1),
                     "fit_residual": res})
    s = np.array([r["W22_seminorm"] for r in rows])
    L = np.sqrt(np.log(1.0 / np.array([r["h"] for r in rows])))
    A = np.stack([L, np.ones_like(L)], axis=1)
    gamma = float(np.linalg.lstsq(A, s, rcond=None)[0][0])
    return {"rows": rows, "gamma": gamma, "target": CORNER_TARGET,
            "increasing": bool(np.all(np.diff(s) > 0))}
