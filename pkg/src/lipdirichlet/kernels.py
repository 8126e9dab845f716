"""Half-space Green functions, Poisson kernels and weighted kernel operators.

Derivatives of the model Green functions are exact: every model kernel is
assembled from log|w| (or 1/|w| in 3-D) times polynomials, and derivatives
of log|w| come from the complex closed form

    d_1^j d_2^k log|w| = Re(i^k (-1)^(N-1) (N-1)! / z^N),  z = w_1 + i w_2, N = j + k.

Weighted operator norms are computed for kernels that are invariant under
horizontal translations. Integrating out x' leaves a one-dimensional kernel
in x_n whose weighted L_p norm equals the norm on the half-space; that
kernel is dilation invariant for K and R, and it is discretised on a
logarithmic grid in x_n and normed with Boyd's nonlinear power iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import CapabilityError, KernelParameterError, ParameterError, SingularityError
from .spaces import MultiIndex, multi_indices

KINDS = ("laplace_2d", "laplace_3d", "bilaplace_2d")


@dataclass(frozen=True)
class ModelOperator:
    """Constant-coefficient model L(D) = sum_{|alpha| = 2m} A_alpha D^alpha."""

    kind: str
    coefficients: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CapabilityError(f"unknown model operator {self.kind!r}; choose from {KINDS}")
        if not self.coefficients:
            n, m = self.n, self.m
            if m == 1:
                co = {tuple(2 if k == j else 0 for k in range(n)): 1.0 for j in range(n)}
            else:
                co = {(4, 0): 1.0, (2, 2): 2.0, (0, 4): 1.0}
            object.__setattr__(self, "coefficients", co)

    @property
    def n(self) -> int:
        return 3 if self.kind.endswith("3d") else 2

    @property
    def m(self) -> int:
        return 2 if self.kind.startswith("bilaplace") else 1

    @property
    def order(self) -> int:
        return 2 * self.m

    ncomp = 1

    @property
    def kappa(self) -> float:
        """Ellipticity constant: L(xi) = |xi|^{2m} for all three models."""
        return 1.0

    def symbol(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1])
        for al, c in self.coefficients.items():
            out = out + c * MultiIndex(al).power(xi)
        return out


def as_operator(op) -> ModelOperator:
    return op if isinstance(op, ModelOperator) else ModelOperator(str(op))


# ---------------------------------------------------------------------------
# exact derivatives of the basic singular functions


def _log_derivative(j, k, w):
    """d_1^j d_2^k log|w| for w of shape (..., 2)."""
    w = np.asarray(w, dtype=float)
    N = j + k
    if N == 0:
        return 0.5 * np.log(np.sum(w * w, axis=-1))
    z = w[..., 0] + 1j * w[..., 1]
    val = (1j ** k) * ((-1) ** (N - 1)) * math.factorial(N - 1) / z ** N
    return val.real


def _r2log_derivative(j, k, w):
    """d_1^j d_2^k (|w|^2 log|w|) by Leibniz on the quadratic factor."""
    w = np.asarray(w, dtype=float)
    out = (w[..., 0] ** 2 + w[..., 1] ** 2) * _log_derivative(j, k, w)
    if j >= 1:
        out = out + j * 2 * w[..., 0] * _log_derivative(j - 1, k, w)
    if k >= 1:
        out = out + k * 2 * w[..., 1] * _log_derivative(j, k - 1, w)
    if j >= 2:
        out = out + j * (j - 1) * _log_derivative(j - 2, k, w)
    if k >= 2:
        out = out + k * (k - 1) * _log_derivative(j, k - 2, w)
    return out


def _inv_r_derivative(gamma, w):
    """Derivatives of 1/|w| in 3-D up to order 2."""
    w = np.asarray(w, dtype=float)
    r2 = np.sum(w * w, axis=-1)
    r = np.sqrt(r2)
    g = tuple(gamma)
    o = sum(g)
    if o == 0:
        return 1.0 / r
    if o == 1:
        i = g.index(1)
        return -w[..., i] / r ** 3
    if o == 2:
        idx = [i for i, e in enumerate(g) for _ in range(e)]
        i, j = idx
        delta = 1.0 if i == j else 0.0
        return (3 * w[..., i] * w[..., j] - delta * r2) / r ** 5
    raise CapabilityError("1/|x| derivatives are coded up to order 2")


def _check_nonzero(x):
    r = np.sqrt(np.sum(np.asarray(x, float) ** 2, axis=-1))
    if np.any(r == 0):
        raise SingularityError("fundamental solution evaluated at the origin")


def fundamental_solution(op, x, gamma=None):
    """F or its partial derivative d^gamma F at points x (shape (..., n))."""
    op = as_operator(op)
    x = np.asarray(x, dtype=float)
    _check_nonzero(x)
    g = (0,) * op.n if gamma is None else tuple(gamma)
    if op.kind == "laplace_2d":
        return -_log_derivative(g[0], g[1], x) / (2 * np.pi)
    if op.kind == "laplace_3d":
        return _inv_r_derivative(g, x) / (4 * np.pi)
    return _r2log_derivative(g[0], g[1], x) / (8 * np.pi)


def reflect(y):
    """ybar = (y', -y_n)."""
    y = np.array(y, dtype=float, copy=True)
    y[..., -1] *= -1
    return y


def _sigma(n, beta):
    """Sign of d_y^beta acting on a function of x - ybar."""
    return (-1) ** int(sum(beta[:-1]))


def green_residual(op, x, y, alpha=None, beta=None):
    """R(x, y) = F(x - y) - G(x, y) and its mixed derivatives d_x^alpha d_y^beta.

    Laplace: R = F(x - ybar). Bilaplace (Boggio):
    8 pi R = |x - y|^2 log|x - ybar| - 2 x_n y_n.
    """
    op = as_operator(op)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = op.n
    al = MultiIndex(alpha if alpha is not None else (0,) * n)
    be = MultiIndex(beta if beta is not None else (0,) * n)
    w = x - reflect(y)
    sig = _sigma(n, be)
    if op.m == 1:
        return sig * fundamental_solution(op, w, al + be)
    # 8 pi R = H(w) - 4 x2 y2 L(w) - 2 x2 y2 with |x - y|^2 = |w|^2 - 4 x2 y2
    tot = al + be
    out = sig * _r2log_derivative(tot[0], tot[1], w)
    x2 = x[..., 1]
    y2 = y[..., 1]
    for a in (0, 1):
        if al[1] < a:
            continue
        for b in (0, 1):
            if be[1] < b:
                continue
            fx = x2 if a == 0 else 1.0
            fy = y2 if b == 0 else 1.0
            coef = math.comb(al[1], a) * math.comb(be[1], b)
            rest = tot - MultiIndex((0, a + b))
            sb = _sigma(n, be - MultiIndex((0, b)))
            out = out - 4 * coef * fx * fy * sb * _log_derivative(rest[0], rest[1], w)
    if al[0] == 0 and be[0] == 0 and al[1] <= 1 and be[1] <= 1:
        fx = x2 if al[1] == 0 else 1.0
        fy = y2 if be[1] == 0 else 1.0
        out = out - 2 * fx * fy
    return out / (8 * np.pi)


def half_space_green(op, x, y, alpha=None, beta=None):
    """Dirichlet Green function G = F(x - y) - R(x, y) and its derivatives."""
    op = as_operator(op)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = op.n
    al = MultiIndex(alpha if alpha is not None else (0,) * n)
    be = MultiIndex(beta if beta is not None else (0,) * n)
    F = (-1) ** be.order * fundamental_solution(op, x - y, al + be)
    return F - green_residual(op, x, y, al, be)


def residual_bound_check(op, sample_count=10_000, decades=4, rng=None, lo=1e-2,
                         return_samples=False):
    """sup |d_x^alpha d_y^beta R| |x - ybar|^n over log-sampled pairs, |alpha| = |beta| = m.

    Pairs are drawn scale-free (heights and horizontal offsets log-uniform)
    and binned by the decade of |x - ybar|. Returns the overall sup, the
    per-decade sups and their drift (max/min over decades).
    """
    op = as_operator(op)
    rng = np.random.default_rng(rng)
    n, m = op.n, op.m
    scale = lo * 10.0 ** rng.uniform(0, decades, sample_count)
    xn = scale * 10.0 ** rng.uniform(-2, 0, sample_count)
    yn = scale * 10.0 ** rng.uniform(-2, 0, sample_count)
    dirs = rng.standard_normal((sample_count, n - 1))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    off = scale * 10.0 ** rng.uniform(-2, 0.3, sample_count)
    xp = rng.uniform(-1, 1, (sample_count, n - 1))
    x = np.concatenate([xp, xn[:, None]], axis=1)
    y = np.concatenate([xp + off[:, None] * dirs, yn[:, None]], axis=1)
    dist = np.linalg.norm(x - reflect(y), axis=1)
    stat = np.zeros(sample_count)
    for al in multi_indices(n, m, m):
        for be in multi_indices(n, m, m):
            v = np.abs(green_residual(op, x, y, al, be)) * dist ** n
            stat = np.maximum(stat, v)
    dec = np.clip(np.floor(np.log10(dist / lo)).astype(int), 0, None)
    per = {}
    for d in np.unique(dec):
        sel = dec == d
        if sel.sum() >= 20:
            per[int(d)] = float(stat[sel].max())
    vals = np.array(list(per.values()))
    out = {"kind": op.kind, "sup": float(stat.max()), "per_decade": per,
           "drift": float(vals.max() / vals.min()), "samples": sample_count}
    if return_samples:
        out["x"], out["y"], out["stat"] = x, y, stat
    return out


# ---------------------------------------------------------------------------
# Poisson kernels


def poisson_kernel(op, j, x, yp=None):
    """P_j(x, y'): reproduces the j-th normal derivative datum on x_n = 0."""
    op = as_operator(op)
    x = np.asarray(x, dtype=float)
    n = op.n
    if yp is not None:
        x = x.copy()
        x[..., :-1] -= np.asarray(yp, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    xn = x[..., -1]
    if op.m == 1 and j == 0:
        area = 2 * np.pi if n == 2 else 4 * np.pi
        return 2 * xn / (area * r2 ** (n / 2))
    if op.kind == "bilaplace_2d" and j == 0:
        return 2 * xn ** 3 / (np.pi * r2 ** 2)
    if op.kind == "bilaplace_2d" and j == 1:
        return xn ** 2 / (np.pi * r2)
    raise CapabilityError(f"no Poisson kernel P_{j} for {op.kind}")


def poisson_homogeneity_degree(op, j):
    op = as_operator(op)
    return j + 1 - op.n


def poisson_bound_ratio(op, j, x, yp=None):
    """|P_j| |x - (y',0)|^{n+m-1-j} / x_n^m."""
    op = as_operator(op)
    x = np.asarray(x, dtype=float)
    d = x.copy()
    if yp is not None:
        d[..., :-1] -= np.asarray(yp, dtype=float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    return np.abs(poisson_kernel(op, j, x, yp)) * r ** (op.n + op.m - 1 - j) / x[..., -1] ** op.m


# ---------------------------------------------------------------------------
# auxiliary integral


def _check_lemma(N, eps, delta, a, b):
    if N not in (1, 2, 3):
        raise ParameterError("the quadrature covers N = 1, 2, 3")
    if eps <= 0:
        raise ParameterError("epsilon must be positive")
    if not (0 < delta < N):
        raise ParameterError("delta must lie in (0, N)")
    if a <= 0:
        raise ParameterError("a = 0 makes the integral diverge at the origin")
    if b < 0:
        raise ParameterError("b must be nonnegative")


def _shell_mean(N, r, z, b, k):
    """Integral over the sphere |eta| = r of (|eta - zeta| + b)^{-k}, |zeta| = z."""
    if N == 1:
        return (abs(r - z) + b) ** (-k) + (r + z + b) ** (-k)
    if N == 3:
        lo, hi = abs(r - z), r + z
        if r == 0 or z == 0:
            return 4 * np.pi * r * r * (max(r, z) + b) ** (-k)

        def anti(w):
            # antiderivative of w (w + b)^{-k}
            u = w + b
            if abs(k - 2) < 1e-12:
                return math.log(u) + b / u
            if abs(k - 1) < 1e-12:
                return u - b * math.log(u)
            return u ** (2 - k) / (2 - k) - b * u ** (1 - k) / (1 - k)
        if lo == 0 and b == 0 and k >= 2:
            lo = 1e-300
        return 2 * np.pi * r / z * (anti(hi) - anti(lo))
    # N = 2: angular quadrature, nodes clustered where |eta - zeta| is smallest
    t, wt = _gauss(160)
    th = np.pi * t ** 3
    jac = 3 * np.pi * t ** 2
    d = np.sqrt(np.maximum(r * r + z * z - 2 * r * z * np.cos(th), 0.0))
    with np.errstate(divide="ignore"):
        f = (d + b) ** (-k)
    f = np.where(np.isfinite(f), f, 0.0)
    return 2 * r * float(np.sum(wt * jac * f))


@lru_cache(maxsize=None)
def _gauss(k):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1), 0.5 * w


def lemma22_integral(N, eps, delta, a, b, zeta):
    """int_{R^N} d eta / ((|eta| + a)^{N+eps} (|eta - zeta| + b)^{N-delta}).

    Returns (lhs, rhs_scale, ratio) with rhs_scale = a^{-eps} (|zeta| + a + b)^{delta - N}
    and ratio = lhs / rhs_scale. Radial quadrature with breakpoints at a, b
    and |zeta|; the shell integral is closed form for N = 1, 3.
    """
    _check_lemma(N, eps, delta, a, b)
    z = float(np.linalg.norm(np.atleast_1d(zeta)))
    k = N - delta

    def radial(r):
        if N == 1:
            shell = _shell_mean(1, r, z, b, k)
        elif N == 3:
            shell = _shell_mean(3, r, z, b, k)
        else:
            shell = _shell_mean(2, r, z, b, k)
        return shell * (r + a) ** (-(N + eps))

    pts = sorted({p for p in (a, b, z) if p > 0})
    edges = [0.0]
    for p in pts:
        for f in (0.5, 1.0, 2.0):
            edges.append(f * p)
    edges = sorted(set(edges))
    total = 0.0
    for lo_, hi_ in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(radial, lo_, hi_, limit=200, points=[z] if lo_ < z < hi_ else None)
        total += val
    tail, _ = integrate.quad(radial, edges[-1], np.inf, limit=200)
    total += tail
    rhs = a ** (-eps) * (z + a + b) ** (delta - N)
    return total, rhs, total / rhs


def lemma22_ratio_grid(N, eps, delta, decades=3, per_decade=2, lo=1e-1):
    """Ratios over a log grid of (a, b, |zeta|); returns the array and min/max."""
    vals = lo * 10.0 ** (np.arange(decades * per_decade + 1) / per_decade)
    out = []
    for a in vals:
        for b in vals:
            for z in vals:
                out.append(lemma22_integral(N, eps, delta, a, b, [z] + [0.0] * (N - 1))[2])
    out = np.array(out)
    return {"ratios": out, "min": float(out.min()), "max": float(out.max()),
            "band": float(out.max() / out.min())}


# ---------------------------------------------------------------------------
# descent


def descent_smoke_test(x=(1.0, 0.0), gamma=(2, 0)):
    """d^gamma F_2(x) against int_R d^gamma F_3(x, z) dz (Laplace, |gamma| = 2)."""
    x = np.asarray(x, dtype=float)
    g3 = tuple(gamma) + (0,)
    lhs = float(fundamental_solution("laplace_2d", x, gamma))

    def f(z):
        return float(fundamental_solution("laplace_3d", np.array([x[0], x[1], z]), g3))

    rhs = 2 * integrate.quad(f, 0, np.inf, limit=200)[0]
    trace = sum(float(fundamental_solution("laplace_2d", x, (2, 0) if j == 0 else (0, 2)))
                for j in range(2))
    return {"lhs": lhs, "rhs": rhs, "rel_error": abs(lhs - rhs) / abs(lhs), "laplacian": trace}


# ---------------------------------------------------------------------------
# weighted operator norms


def profile_K(n=2):
    """Q(zeta) for K: |x - ybar|^{-n} = x_n^{-n} |(zeta', zeta_n + 2)|^{-n}."""
    def Q(zp, zn):
        return (zp * zp + (zn + 2.0) ** 2) ** (-n / 2)
    return Q


def profile_R(n=2):
    """Q(zeta) for R: the extra factor log(|zeta| + 2) with |zeta| = |x - y| / x_n."""
    def Q(zp, zn):
        return np.log(np.sqrt(zp * zp + zn * zn) + 2.0) * (zp * zp + (zn + 2.0) ** 2) ** (-n / 2)
    return Q


def marginal_profile(Q, r):
    """q(r) = int_R Q(zeta', r - 1) d zeta' (n = 2).

    The substitution zeta' = (r + 1) tan(theta) maps the line onto a finite
    interval and absorbs the |zeta|^{-2} decay of the profiles used here.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty(len(r))
    for i, ri in enumerate(r):
        c = ri + 1.0

        def f(th, c=c, ri=ri):
            t = c * np.tan(th)
            return Q(t, ri - 1.0) * c / np.cos(th) ** 2

        out[i] = 2 * integrate.quad(f, 0, 0.5 * np.pi, limit=200)[0]
    return out


def q_bound(Q, p, a):
    """int_{R^2_+} Q(zeta', zeta_n - 1) zeta_n^{-a-1/p} d zeta."""
    e = a + 1.0 / p
    if not (0 < e < 1):
        raise KernelParameterError("the profile integral diverges for these (p, a)")

    def inner(r):
        return marginal_profile(Q, [r])[0] * r ** (-e)

    v1 = integrate.quad(inner, 0, 1, limit=200)[0]
    v2 = integrate.quad(inner, 1, np.inf, limit=200)[0]
    return v1 + v2


def boyd_norm(A, p, iters=500, tol=1e-10):
    """||A||_{p -> p} for an entrywise nonnegative matrix (Boyd's iteration)."""
    A = np.asarray(A, dtype=float)
    if np.any(A < 0):
        raise KernelParameterError("Boyd's iteration needs a nonnegative matrix")
    q = p / (p - 1.0)
    x = np.ones(A.shape[1])
    x /= np.linalg.norm(x, p)
    lam = 0.0
    for _ in range(iters):
        y = A @ x
        lam_new = float(np.linalg.norm(y, p))
        if lam_new == 0.0:
            return 0.0
        z = A.T @ (y ** (p - 1))
        x = z ** (q - 1)
        x /= np.linalg.norm(x, p)
        if abs(lam_new - lam) <= tol * lam_new:
            break
        lam = lam_new
    return lam_new


@dataclass
class LogGrid:
    """x_n = exp(u) on a uniform u grid; dy = x du."""

    half_width: float = 60.0
    size: int = 2000

    def __post_init__(self):
        if self.size > 40_000:
            raise KernelParameterError("matrix cap is 4e4 unknowns")
        self.u = np.linspace(-self.half_width, self.half_width, self.size)
        self.du = float(self.u[1] - self.u[0])
        self.x = np.exp(self.u)


@lru_cache(maxsize=16)
def _dilation_table(which, half_width, size):
    g = LogGrid(half_width, size)
    k = np.arange(-(size - 1), size)
    r = np.exp(k * g.du)
    if which == "K":
        q = np.pi / (1.0 + r)
    elif which == "R":
        q = marginal_profile(profile_R(), r)
    else:
        raise CapabilityError(which)
    return q


def _kernel_matrix(which, grid: LogGrid, b=None):
    """Discrete marginal kernel k(x_i, y_j) y_j du."""
    x = grid.x
    M = grid.size
    if which in ("K", "R"):
        q = _dilation_table(which, grid.half_width, grid.size)
        i = np.arange(M)
        idx = (i[None, :] - i[:, None]) + (M - 1)
        A = q[idx] / x[:, None]
    elif which == "T":
        if b is None:
            raise KernelParameterError("T_b needs a function b(x_n)")
        bx = np.asarray(b(x), dtype=float)
        A = np.pi * np.abs(bx[:, None] - bx[None, :]) / (x[:, None] + x[None, :])
    else:
        raise CapabilityError(f"unknown operator {which!r}")
    return A * (x * grid.du)[None, :]


def weighted_operator_norm(which, p, s, grid=None, b=None):
    """Empirical norm on L_p(R^2_+, x_n^{ap} dx), a = 1 - s - 1/p (a lower estimate)."""
    grid = grid or LogGrid()
    a = 1.0 - s - 1.0 / p
    if not (-1.0 / p < a < 1.0 - 1.0 / p):
        raise ParameterError("s must lie in (0, 1)")
    A = _kernel_matrix(which, grid, b)
    mass = grid.x ** (a * p) * grid.x * grid.du
    D = mass ** (1.0 / p)
    B = D[:, None] * A / D[None, :]
    return boyd_norm(B, p)


def kernel_norm_table(ps=(1.5, 2, 3, 6), ss=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                      ops=("K", "R", "T"), b=None, bmo=None, grid=None):
    """Rows (op, p, a, s, statistic, bound, ratio); statistic = norm s (1 - s) [/ BMO for T]."""
    grid = grid or LogGrid()
    if b is None:
        b = bounded_bmo_profile
    if bmo is None and "T" in ops:
        bmo = bmo_of_profile(b)
    rows = []
    for name in ops:
        for p in ps:
            for s in ss:
                a = 1.0 - s - 1.0 / p
                nrm = weighted_operator_norm(name, p, s, grid, b if name == "T" else None)
                stat = nrm * s * (1 - s)
                if name == "T":
                    stat /= bmo
                    bound = float("nan")
                else:
                    bound = q_bound(profile_K() if name == "K" else profile_R(), p, a)
                rows.append({"op": name, "p": p, "a": a, "s": s, "norm": nrm,
                             "statistic": stat, "bound": bound,
                             "ratio": nrm / bound if np.isfinite(bound) else float("nan")})
    return rows


def bounded_bmo_profile(t):
    """b(x_n) = tanh(log x_n): bounded, in BMO, not continuous at scale 0."""
    return np.tanh(np.log(t))


def log_profile(t):
    return np.log(t)


def bmo_of_profile(b, lo=1e-8, hi=1e8, count=6000):
    """BMO seminorm of x -> b(x_n) over vertical segments on a geometric grid.

    For functions of x_n alone on R^2_+ the one-dimensional seminorm on
    (0, inf) is used (squares and intervals give equivalent seminorms).
    """
    from .geometry import bmo_seminorm, interval_samples
    smp = interval_samples(b, lo, hi, count, geometric=True)
    return bmo_seminorm(smp, max_centres=600)


# ---------------------------------------------------------------------------
# direct application on a sampled half-plane function


def _cells(f):
    """(points, values, volumes) of a GridFunction on R^n_+ (masked cells)."""
    pts = f.grid.points()
    vals = np.asarray(f.values)[f.grid.mask]
    vol = f.grid.cell_volumes()[f.grid.mask]
    return pts, vals, vol


def dilation_kernel_op_Q(Q, f, points=None, block=2048):
    """Qf(x) = x_n^{-n} int Q((y - x)/x_n) f(y) dy by cell quadrature.

    ``Q(zeta_prime, zeta_n)`` for n = 2. Evaluated at ``points`` (default:
    the cell centres of f).
    """
    P, v, vol = _cells(f)
    X = P if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(X), dtype=np.result_type(v, float))
    for i0 in range(0, len(X), block):
        Xb = X[i0:i0 + block]
        xn = Xb[:, -1:]
        zp = (P[None, :, 0] - Xb[:, None, 0]) / xn
        zn = (P[None, :, 1] - Xb[:, None, 1]) / xn
        out[i0:i0 + block] = (Q(zp, zn) * (v * vol)[None, :]).sum(axis=1) / xn[:, 0] ** 2
    return out


def hardy_ops_RK(f, which="K", points=None):
    """Kf or Rf at ``points`` (default: cell centres)."""
    if which == "K":
        return dilation_kernel_op_Q(profile_K(), f, points)
    if which == "R":
        return dilation_kernel_op_Q(profile_R(), f, points)
    raise CapabilityError(f"unknown operator {which!r}")


def oscillation_commutator_Tb(b, f, points=None, block=2048):
    """Tf(x) = int |b(x) - b(y)| / |x - ybar|^n f(y) dy; ``b`` maps points to values."""
    P, v, vol = _cells(f)
    X = P if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    bP = np.asarray(b(P), dtype=float)
    bX = np.asarray(b(X), dtype=float)
    if np.ptp(bP) == 0 and np.ptp(bX) == 0 and np.all(bX == bP[0]):
        return np.zeros(len(X))
    n = P.shape[1]
    out = np.zeros(len(X), dtype=np.result_type(v, float))
    for i0 in range(0, len(X), block):
        Xb = X[i0:i0 + block]
        w = Xb[:, None, :] - reflect(P)[None, :, :]
        d = np.sqrt(np.sum(w * w, axis=-1))
        kern = np.abs(bX[i0:i0 + block, None] - bP[None, :]) / d ** n
        out[i0:i0 + block] = (kern * (v * vol)[None, :]).sum(axis=1)
    return out


def mean_drift_check(b, x, rho, r, order=64):
    """|mean_{B(x,rho)} b - mean_{B(x,r)} b| / log(r/rho + 1) in 2-D.

    Ball means use a polar Gauss rule with ``order`` nodes per direction.
    Returns (drift, log factor, ratio).
    """
    x = np.asarray(x, dtype=float)

    def mean(R):
        t, wt = _gauss(order)
        th = 2 * np.pi * t
        rr = R * np.sqrt(t)  # area-uniform radial variable
        T, RR = np.meshgrid(th, rr, indexing="ij")
        W = np.outer(wt, wt)
        pts = np.stack([x[0] + RR.ravel() * np.cos(T.ravel()),
                        x[1] + RR.ravel() * np.sin(T.ravel())], axis=1)
        return float(np.sum(W.ravel() * np.asarray(b(pts))))

    drift = abs(mean(rho) - mean(r))
    lf = math.log(r / rho + 1.0)
    return drift, lf, drift / lf
