"""Command line front end: ``lipdir <subcommand> [--config FILE] ...``.

Every subcommand writes CSV tables and a ``manifest.txt`` (key=value lines
with input hash, versions, per-check PASS/FAIL and file hashes) into the
output directory. Exit status: 0 when all checks pass, 1 when a check
fails, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, LipDirichletError

OUTPUT_ENV = "LIPDIR_OUTPUT_DIR"

# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    subcommand: str
    options: dict = field(default_factory=dict)
    seed: int = 0
    resolution: Optional[list] = None
    ps: Optional[list] = None
    ss: Optional[list] = None
    output: str = "lipdir-out"
    marks: dict = field(default_factory=dict)
    source: str = ""

    def get(self, key, default=None):
        return self.options.get(key, default)

    def error(self, key, msg):
        line, col = self.marks.get(key, (None, None))
        return ConfigError(f"{key}: {msg}", line, col)


def _construct(node, marks, path=""):
    """Plain Python data from a YAML node, recording key positions."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = str(k.value)
            full = f"{path}.{key}" if path else key
            marks[full] = (k.start_mark.line + 1, k.start_mark.column + 1)
            out[key] = _construct(v, marks, full)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, marks, path) for v in node.value]
    return yaml.SafeLoader(io.StringIO("")).construct_object(node)


def parse_config_text(text):
    """Parse YAML text to (dict, marks); errors carry line and column."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        col = mark.column + 1 if mark is not None else None
        raise ConfigError(f"cannot parse config: {getattr(exc, 'problem', exc)}", line, col) from None
    marks = {}
    if node is None:
        return {}, marks
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("config must be a mapping of keys to values",
                          node.start_mark.line + 1, node.start_mark.column + 1)
    return _construct(node, marks), marks


def _float_list(value, name, marks):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        value = [value]
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        line, col = marks.get(name, (None, None))
        raise ConfigError(f"{name}: expected a list of numbers, got {value!r}", line, col) from None


def parse_params_flag(text):
    """``p=2,3;s=0.25,0.5`` to (ps, ss)."""
    ps = ss = None
    for part in text.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"--params: expected key=values, got {part!r}", 1, 1)
        k, v = part.split("=", 1)
        vals = _float_list(v, "--params", {})
        if k.strip() == "p":
            ps = vals
        elif k.strip() == "s":
            ss = vals
        else:
            raise ConfigError(f"--params: unknown key {k.strip()!r}", 1, 1)
    return ps, ss


KNOWN_KEYS = {"subcommand", "seed", "resolution", "params", "output"}


def build_config(args, text=None) -> RunConfig:
    data, marks = parse_config_text(text) if text else ({}, {})
    sub = args.subcommand or data.get("subcommand")
    if sub is None:
        raise ConfigError("no subcommand given", 1, 1)
    if "subcommand" in data and args.subcommand and data["subcommand"] != args.subcommand:
        line, col = marks.get("subcommand", (None, None))
        raise ConfigError(f"config is for {data['subcommand']!r}, not {args.subcommand!r}", line, col)
    cfg = RunConfig(sub, {k: v for k, v in data.items() if k not in KNOWN_KEYS},
                    marks=marks, source=text or "")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise cfg.error("seed", f"expected an integer, got {seed!r}")
    cfg.seed = seed if args.seed is None else args.seed
    res = data.get("resolution")
    cfg.resolution = _float_list(res, "resolution", marks)
    if args.resolution is not None:
        cfg.resolution = _float_list(args.resolution, "--resolution", {})
    par = data.get("params") or {}
    if not isinstance(par, dict):
        raise cfg.error("params", "expected a mapping with keys p and s")
    for k in par:
        if k not in ("p", "s"):
            raise cfg.error(f"params.{k}", "unknown parameter (use p and s)")
    cfg.ps = _float_list(par.get("p"), "params.p", marks)
    cfg.ss = _float_list(par.get("s"), "params.s", marks)
    if args.params:
        ps, ss = parse_params_flag(args.params)
        cfg.ps = ps or cfg.ps
        cfg.ss = ss or cfg.ss
    for p in cfg.ps or []:
        if not p > 1:
            raise cfg.error("params.p", f"p must exceed 1, got {p}")
    for s in cfg.ss or []:
        if not 0 < s < 1:
            raise cfg.error("params.s", f"s must lie in (0, 1), got {s}")
    cfg.output = args.output or os.environ.get(OUTPUT_ENV) or data.get("output") or "lipdir-out"
    return cfg


# ---------------------------------------------------------------------------
# results


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Result:
    tables: Dict[str, List[dict]] = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)

    def check(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def write_csv(path, rows):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_outputs(cfg: RunConfig, result: Result):
    os.makedirs(cfg.output, exist_ok=True)
    files = []
    for name, rows in result.tables.items():
        path = os.path.join(cfg.output, f"{name}.csv")
        write_csv(path, rows)
        files.append(path)
    import scipy
    lines = [f"subcommand={cfg.subcommand}", f"seed={cfg.seed}",
             f"inputs_sha256={hashlib.sha256(cfg.source.encode()).hexdigest()}",
             f"resolution={','.join(_fmt(r) for r in cfg.resolution or [])}",
             f"params.p={','.join(_fmt(p) for p in cfg.ps or [])}",
             f"params.s={','.join(_fmt(s) for s in cfg.ss or [])}",
             f"version.lipdirichlet={__version__}", f"version.numpy={np.__version__}",
             f"version.scipy={scipy.__version__}",
             f"version.python={platform.python_version()}"]
    for c in result.checks:
        lines.append(f"check.{c.name}={'PASS' if c.passed else 'FAIL'}")
    for path in files:
        lines.append(f"file.{os.path.basename(path)}.sha256={_sha256(path)}")
    status = "PASS" if all(c.passed for c in result.checks) else "FAIL"
    lines.append(f"status={status}")
    with open(os.path.join(cfg.output, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return status


# ---------------------------------------------------------------------------
# domains and expressions


def _expr(cfg, key, source, variables=("x", "y")):
    from .expr import compile_expression
    try:
        return compile_expression(str(source), variables)
    except ConfigError as exc:
        line, col = cfg.marks.get(key, (exc.line, exc.column))
        raise ConfigError(f"{key}: {exc.message}", line, col) from None


def _points_fun(ex):
    return lambda X: ex(x=X[:, 0], y=X[:, 1])


def make_domain(cfg, h, spec=None):
    """(domain, cell grid, boundary grid) from the ``domain`` config entry."""
    from . import geometry as G
    spec = cfg.get("domain", {"kind": "square"}) if spec is None else spec
    if not isinstance(spec, dict):
        raise cfg.error("domain", "expected a mapping with a 'kind' key")
    kind = spec.get("kind", "square")
    if kind == "square":
        dom = G.unit_square(h)
        return dom, dom.volume_grid(), dom.boundary_grid(h / 4)
    if kind == "polygon":
        V = spec.get("vertices")
        if not V:
            raise cfg.error("domain.kind", "polygon needs 'vertices'")
        dom = G.PolygonalDomain2D(V, h)
        return dom, dom.volume_grid(), dom.boundary_grid(h / 4)
    if kind == "lshape":
        dom = G.PolygonalDomain2D([(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)], h)
        return dom, dom.volume_grid(), dom.boundary_grid(h / 4)
    if kind == "graph":
        ex = _expr(cfg, "domain.phi", spec.get("phi", "0.1*sin(2*pi*x)"), ("x",))
        dom = G.LipschitzGraphDomain.from_function(lambda x: ex(x=x), [0.0], [1.0], h / 4)
        return dom, dom.volume_grid(h, height=float(spec.get("height", 0.6))), dom.boundary_grid()
    raise cfg.error("domain.kind", f"unknown domain kind {kind!r}")


def _res(cfg, default):
    return [float(r) if r < 1 else 1.0 / r for r in (cfg.resolution or default)]


def _ps(cfg, default):
    return cfg.ps or list(default)


def _ss(cfg, default):
    return cfg.ss or list(default)


# ---------------------------------------------------------------------------
# subcommands


def cmd_oscillation(cfg: RunConfig) -> Result:
    from . import geometry as G
    res = Result()
    kind = cfg.get("field", "sawtooth")
    eps = _float_list(cfg.get("eps", [0.05, 0.1, 0.2, 0.4]), "eps", cfg.marks)
    count = int(cfg.get("count", 4000))
    if kind == "constant":
        S = G.interval_samples(lambda x: np.full_like(x, float(cfg.get("value", 1.0))), 0, 1, count)
        b = G.bmo_seminorm(S)
        osc = G.infinitesimal_oscillation(S, eps_ladder=sorted(eps, reverse=True))
        rows = [{"eps": e, "bmo": b, "oscillation": o} for e, o in osc]
        res.tables["oscillation"] = rows
        tiny = 1e-13 * max(1.0, abs(float(cfg.get("value", 1.0))))
        res.check("constant_zero", all(r["bmo"] <= tiny and r["oscillation"] <= tiny for r in rows),
                  "constant field has no oscillation")
        return res
    if kind != "sawtooth":
        raise cfg.error("field", f"unknown field {kind!r}")
    rows = G.sawtooth_study(eps, count)
    res.tables["oscillation"] = rows
    q = [r["bmo_over_eps"] for r in rows]
    res.check("bmo_scaling_band", max(q) / min(q) < 3.0, f"band {max(q) / min(q):.3g}")
    for r in rows:
        res.check(f"sup_band_eps={_fmt(r['eps'])}", 0.9 <= r["sup_ratio"] <= 1.2,
                  f"sup ratio {r['sup_ratio']:.4g}")
    return res


def cmd_norms(cfg: RunConfig) -> Result:
    from . import spaces as S
    res = Result()
    ps = _ps(cfg, [2.0])
    ss = _ss(cfg, [0.1, 0.3, 0.5, 0.7, 0.9])
    count = int(cfg.get("bumps", 20))
    rows = []
    for p in ps:
        rows += S.hardy_bump_study(ss, p, count=count, rng=cfg.seed)
    res.tables["hardy"] = rows
    for p in ps:
        st = [r["statistic"] for r in rows if r["p"] == p]
        res.check(f"hardy_band_p={_fmt(p)}", max(st) / min(st) < 3.0,
                  f"band {max(st) / min(st):.3g}")
    return res


def _field(cfg, seed, per):
    from . import spaces as S
    kind = cfg.get("data", "trig")
    rng = np.random.default_rng(seed)
    if kind == "trig":
        return S.TrigField.random(2, rng, period=per)
    if kind == "polynomial":
        return S.PolynomialField.random(2, int(cfg.get("degree", 1)), rng)
    raise cfg.error("data", f"unknown data kind {kind!r}")


def cmd_extend(cfg: RunConfig) -> Result:
    from . import spaces as S, extenders as E
    res = Result()
    ms = [int(m) for m in cfg.get("m", [1, 2])]
    hs = _res(cfg, [16, 32, 64])
    samples = int(cfg.get("samples", 1))
    s = _ss(cfg, [0.5])[0]
    rows = []
    for k in range(samples):
        for m in ms:
            errs = []
            for h in hs:
                dom, grid, bg = make_domain(cfg, h)
                per = 1.0 if getattr(dom, "periodic", False) else None
                W = S.WhitneyArray.from_field(bg, m, _field(cfg, cfg.seed + k, per))
                U = E.boundary_extension_E(W, dom, grid=grid)
                rt = E.round_trip_error(W, E.higher_trace(U, m, bg), 2)
                errs.append(rt["error"])
                rows.append({"sample": k, "m": m, "h": h, "error": rt["error"],
                             "coverage": rt["coverage"]})
            if len(hs) > 1 and errs[-1] > 1e-8:
                rate = math.log(errs[0] / errs[-1]) / math.log(hs[0] / hs[-1])
                res.check(f"rate_sample={k}_m={m}", rate >= 0.8 * s, f"rate {rate:.3g}")
            else:
                res.check(f"exact_sample={k}_m={m}", errs[-1] <= 1e-8, f"error {errs[-1]:.3g}")
    res.tables["extend"] = rows
    return res


def cmd_trace(cfg: RunConfig) -> Result:
    from . import spaces as S, extenders as E
    res = Result()
    rows = []
    for h in _res(cfg, [16]):
        dom, grid, bg = make_domain(cfg, h)
        for m in [int(m) for m in cfg.get("m", [1, 2])]:
            rng = np.random.default_rng(cfg.seed)
            P = S.PolynomialField.random(2, m - 1, rng)
            W = S.WhitneyArray.from_field(bg, m, P)
            U = E.boundary_extension_E(W, dom, grid=grid)
            rt = E.round_trip_error(W, E.higher_trace(U, m, bg), 2)
            rows.append({"h": h, "m": m, "error": rt["error"], "coverage": rt["coverage"]})
            res.check(f"polynomial_exact_h={_fmt(h)}_m={m}", rt["error"] <= 1e-8,
                      f"error {rt['error']:.3g}")
    res.tables["trace"] = rows
    return res


def cmd_flatten(cfg: RunConfig) -> Result:
    from . import geometry as G, extenders as E
    res = Result()
    eps = float(cfg.get("eps", 0.1))
    C = float(cfg.get("C", 10.0))
    phi, dphi = G.sawtooth_phi(eps), G.sawtooth_dphi(eps)
    fm = E.FlatteningMap(phi=lambda x: phi(np.asarray(x).reshape(-1)), lip=1.0, C=C)
    rng = np.random.default_rng(cfg.seed)
    count = int(cfg.get("count", 1000))
    x = np.c_[rng.uniform(-0.5, 0.5, count), 10 ** rng.uniform(-4, 0, count)]
    X = fm.flatten(x)
    back = float(np.abs(fm.unflatten(X) - x).max())
    det = float(np.linalg.det(fm.jacobian(x)).min())
    lo, hi = E.height_band(fm, x)
    bounds = E.flatten_derivative_bounds(fm, dphi, X[:200])
    res.tables["flatten"] = [{"eps": eps, "C": C, "round_trip": back, "det_min": det,
                              "det_bound": fm.det_lower_bound(), "height_min": lo,
                              "height_max": hi,
                              "derivative_ratio": bounds.get("derivative_ratio", 0.0)}]
    res.check("round_trip", back <= 1e-9, f"{back:.3g}")
    res.check("jacobian_bound", det >= fm.det_lower_bound() * (1 - 1e-12), f"det min {det:.4g}")
    res.check("derivative_ratio_finite", np.isfinite(bounds.get("derivative_ratio", 0.0)))
    return res


def cmd_green_verify(cfg: RunConfig) -> Result:
    from . import kernels as K
    res = Result()
    kinds = cfg.get("kinds", list(K.KINDS))
    count = int(cfg.get("samples", 10000))
    rows = []
    for kind in kinds:
        rep = K.residual_bound_check(kind, sample_count=count, decades=4, rng=cfg.seed)
        for d, v in sorted(rep["per_decade"].items()):
            rows.append({"kind": kind, "decade": d, "statistic": v})
        res.check(f"drift_{kind}", rep["drift"] < 2.0, f"drift {rep['drift']:.4g}")
    res.tables["green"] = rows
    return res


def cmd_kernel_norms(cfg: RunConfig) -> Result:
    from . import kernels as K
    res = Result()
    ps = _ps(cfg, [1.5, 2, 3, 6])
    ss = _ss(cfg, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    ops = cfg.get("ops", ["K", "T"])
    size = int(cfg.get("size", 2000))
    rows = K.kernel_norm_table(ps, ss, ops=tuple(ops), grid=K.LogGrid(size=size))
    out = [{k: r[k] for k in ("op", "p", "a", "s", "statistic", "bound", "ratio")} for r in rows]
    res.tables["kernel_norms"] = out
    res.check("finite", all(np.isfinite(r["statistic"]) for r in out))
    for op in ops:
        st = [r["statistic"] for r in out if r["op"] == op]
        res.check(f"band_{op}", max(st) / min(st) < 4.0, f"band {max(st) / min(st):.3g}")
        rat = [r["ratio"] for r in out if r["op"] == op and np.isfinite(r["ratio"])]
        if rat:
            res.check(f"bound_{op}", max(rat) <= 1.0 + 1e-9, f"max ratio {max(rat):.4g}")
    return res


def _coefficients(cfg):
    from .solver import CoefficientField
    spec = cfg.get("coefficients", {}) or {}
    if not isinstance(spec, dict):
        raise cfg.error("coefficients", "expected a mapping")
    scale = spec.get("scale", 1.0)
    mass = spec.get("mass")
    sc = _points_fun(_expr(cfg, "coefficients.scale", scale)) if isinstance(scale, str) else float(scale)
    ms = None
    if mass is not None:
        ms = _points_fun(_expr(cfg, "coefficients.mass", mass)) if isinstance(mass, str) else float(mass)
    return CoefficientField.laplacian(2, scale=sc, mass=ms)


def cmd_solve(cfg: RunConfig) -> Result:
    from . import solver as SV, spaces as S
    res = Result()
    coeffs = _coefficients(cfg)
    F = cfg.get("F")
    F = _points_fun(_expr(cfg, "F", F)) if F is not None else None
    data = cfg.get("boundary")
    field_ = None
    if data is not None:
        g = _expr(cfg, "boundary", data)
        field_ = lambda alpha, X: g(x=X[..., 0], y=X[..., 1])
    exact = cfg.get("exact")
    exact = _points_fun(_expr(cfg, "exact", exact)) if exact is not None else None
    tol = float(cfg.get("tolerance", 1e-2))
    pl = [S.NormParams.from_s(p, s) for p in _ps(cfg, [2.0]) for s in _ss(cfg, [0.5])]
    diag_rows, sol_rows = [], []
    hs = _res(cfg, [32])
    for h in hs:
        dom = make_domain(cfg, h)[0]
        prob = SV.DirichletProblem(dom, coeffs, 1, F=F, data=field_)
        U, d = SV.solve_dirichlet(prob, None, h, norm_params=pl)
        grid = SV.TensorGrid.for_domain(dom, h)
        P = grid.points()
        err = float(np.max(np.abs(U - exact(P)))) if exact is not None else math.nan
        for r in d["norms"]:
            diag_rows.append({"h": h, **r, "residual": d["solver"]["residual"], "max_error": err})
        res.check(f"residual_h={_fmt(h)}", d["solver"]["residual"] <= 1e-10,
                  f"{d['solver']['residual']:.3g}")
        if exact is not None:
            res.check(f"exact_h={_fmt(h)}", err <= tol, f"max error {err:.3g}")
        if h == hs[-1]:
            sol_rows = [{"x": x, "y": y, "u": float(np.real(u))} for (x, y), u in zip(P, U)]
    res.tables["solution"] = sol_rows
    res.tables["diagnostics"] = diag_rows
    return res


def cmd_corner_demo(cfg: RunConfig) -> Result:
    from . import solver as SV
    res = Result()
    ladder = [int(round(1 / h)) for h in _res(cfg, [32, 64, 128])]
    rep = SV.biharmonic_corner_demo(tuple(ladder))
    rows = [{"h": r["h"], "c_fit": r["c_fit"], "W22_seminorm": r["W22_seminorm"]} for r in rep["rows"]]
    res.tables["corner"] = rows
    c = rows[-1]["c_fit"]
    rel = abs(c - SV.CORNER_TARGET) / SV.CORNER_TARGET
    res.check("amplitude", rel <= 0.1, f"c = {c:.5g}, target {SV.CORNER_TARGET:.5g}")
    res.check("seminorm_increasing", rep["increasing"], f"gamma {rep['gamma']:.3g}")
    return res


def cmd_freeze_iterate(cfg: RunConfig) -> Result:
    from . import solver as SV, geometry as G
    res = Result()
    amps = _float_list(cfg.get("amplitudes", [0, 0.05, 0.2, 0.5]), "amplitudes", cfg.marks)
    h = _res(cfg, [32])[0]
    dom = G.unit_square(h)
    F = lambda X: np.exp(X[:, 0]) * np.cos(3 * X[:, 1])
    rows = []
    for a in amps:
        r = SV.frozen_coefficient_iteration(
            SV.DirichletProblem(dom, SV.oscillating_coefficient(a), 1, F=F), h)
        rows.append({"amplitude": a, "q": r.q, "iterations": len(r.updates),
                     "converged": r.converged, "diverged": r.diverged,
                     "error_vs_direct": r.error_vs_direct})
    res.tables["freeze"] = rows
    qs = [r["q"] for r in rows]
    res.check("monotone_q", all(b > a for a, b in zip(qs, qs[1:])), "q increases with amplitude")
    for r in rows:
        if r["amplitude"] == 0:
            res.check("constant_one_step", r["q"] < 1e-10, f"q {r['q']:.3g}")
        elif r["q"] < 1:
            res.check(f"matches_direct_amp={_fmt(r['amplitude'])}", r["error_vs_direct"] <= 1e-6,
                      f"{r['error_vs_direct']:.3g}")
    return res


COMMANDS: Dict[str, Callable[[RunConfig], Result]] = {
    "oscillation": cmd_oscillation,
    "norms": cmd_norms,
    "extend": cmd_extend,
    "trace": cmd_trace,
    "flatten": cmd_flatten,
    "green-verify": cmd_green_verify,
    "kernel-norms": cmd_kernel_norms,
    "solve": cmd_solve,
    "corner-demo": cmd_corner_demo,
    "freeze-iterate": cmd_freeze_iterate,
}


def run(cfg: RunConfig):
    """Run one subcommand; returns (exit status, Result)."""
    if cfg.subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {cfg.subcommand!r}", *cfg.marks.get("subcommand", (None, None)))
    result = COMMANDS[cfg.subcommand](cfg)
    status = write_outputs(cfg, result)
    return (0 if status == "PASS" else 1), result


def _parser():
    ap = argparse.ArgumentParser(prog="lipdir", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", nargs="?", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--output", help=f"output directory (else ${OUTPUT_ENV}, config, ./lipdir-out)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--resolution", help="comma list of mesh widths or cell counts")
    ap.add_argument("--params", help="e.g. 'p=2,3;s=0.25,0.5'")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        text = None
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        cfg = build_config(args, text)
        status, result = run(cfg)
    except ConfigError as exc:
        print(f"lipdir: config error: {exc}", file=sys.stderr)
        return 2
    except LipDirichletError as exc:
        print(f"lipdir: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for c in result.checks:
        line = f"{'PASS' if c.passed else 'FAIL'} {c.name}"
        print(line + (f"  [{c.detail}]" if c.detail else ""))
    if status:
        failed = [c.name for c in result.checks if not c.passed]
        print(f"lipdir: failing check(s): {', '.join(failed)}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
