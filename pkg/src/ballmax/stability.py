"""Inequality chain F(u) <= F(v) <= F(w) and the quantitative stability estimate.

For a competitor u the auxiliary set G carries the same ray masses as u, and
``v = a 1_G``. With ``delta = F(w) - F(u)`` and ``lam`` the linear decay rate of
``F(., a)`` on the truncated domain, every report carries

* the displacement lower bounds for ``delta / lam`` obtained from the set
  transport G \\ E -> E \\ G and from the ray maps u -> v,
* the two intermediate estimates for ``|E triangle G|`` and ``int |u - v|^p``,
* the main ratio ``int |u - w|^p / sqrt(delta / lam)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import radial
from .integrand import check_condition, check_h1, estimate_lambda
from .transport import (
    MAX_CELLS,
    DiscretizationError,
    assign_min_cost,
    discretize_sets,
    indicator_measure,
    integrate_source,
    monotone_transport_1d,
    ray_measure,
    step_ray_displacements,
    verify_inward,
)

TOL_CHAIN_REL = 1e-6
CELL_TARGET = 300

CSV_COLUMNS = (
    "family", "params", "n", "p", "a", "tau", "delta", "lambda", "lhs", "rhs_core",
    "ratio", "quant1_rhs", "quant2_rhs", "step1_lhs", "step1_ratio", "step2_lhs", "step2_ratio",
)


class HypothesisError(ValueError):
    def __init__(self, name, violation=float("nan")):
        super().__init__(f"hypothesis {name!r} fails (worst violation {violation:.3g})")
        self.name = name
        self.violation = violation


class InequalityViolation(AssertionError):
    pass


class StabilityError(ValueError):
    pass


class CalibrationWarning(UserWarning):
    pass


def _key(F):
    return (F.family, tuple(sorted(F.params.items())), F.a, F.p, F.n)


def _context(F, grid):
    """Per (F, grid): hypothesis checks, lambda, the ball profile and w."""
    key = ("ctx",) + _key(F)
    if key not in grid._cache:
        h1 = check_h1(F, grid.r_nodes)
        cond = check_condition(F, grid.r_nodes)
        lam = estimate_lambda(F, grid.r_nodes)
        profile = radial.ball_radius(F.n, F.a, F.p, F, grid.R_max)
        w = radial.build_maximizer(profile, grid)
        F_w, e_w = radial.functional_with_error(F, w)
        grid._cache[key] = dict(h1=h1, cond=cond, lam=lam, profile=profile, w=w, F_w=F_w, e_w=e_w)
    return grid._cache[key]


def _require_hypotheses(ctx):
    if not ctx["h1"].passed:
        raise HypothesisError("h1", ctx["h1"].violation)
    if not ctx["cond"].passed:
        raise HypothesisError("condition", ctx["cond"].violation)


@dataclass(frozen=True)
class ChainReport:
    F_u: float
    F_v: float
    F_w: float
    gap_uv: float
    gap_vw: float
    delta: float
    tol_chain: float
    quad_error: float

    @property
    def ok(self):
        return self.gap_uv >= -self.tol_chain and self.gap_vw >= -self.tol_chain


def chain_report(F, u, strict=True, tol_scale=1.0, check_hypotheses=True):
    """Evaluate F(u), F(v), F(w) for the auxiliary v and the maximiser w."""
    grid = u.grid
    ctx = _context(F, grid)
    if check_hypotheses:
        _require_hypotheses(ctx)
    if not radial.in_X(u, F.p):
        warnings.warn("competitor violates the mass constraint", radial.ConstraintWarning, stacklevel=2)
    G = radial.build_auxiliary(u, F.p)
    F_u, e_u = radial.functional_with_error(F, u)
    F_v, e_v = radial.functional_with_error(F, G.as_function())
    F_w = ctx["F_w"]
    quad = e_u + e_v + ctx["e_w"]
    tol = tol_scale * (TOL_CHAIN_REL * max(1.0, F_w) + quad)
    gap_uv, gap_vw = F_v - F_u, F_w - F_v
    rep = ChainReport(F_u, F_v, F_w, gap_uv, gap_vw, gap_uv + gap_vw, tol, quad)
    if strict and not rep.ok:
        raise InequalityViolation(
            f"chain violated: gap_uv={gap_uv:.3e}, gap_vw={gap_vw:.3e}, tol={tol:.3e}"
        )
    return rep


# ---------------------------------------------------------------------------
# displacement lower bounds


@dataclass(frozen=True)
class DisplacementBounds:
    lam: float
    quant1_rhs: float
    quant1_err: float
    quant1_polar: float
    quant2_rhs: float
    quant2_err: float
    n_cells: int = 0
    discarded_fraction: float = 0.0
    inward_fraction: float = 1.0
    target_inside_fraction: float = 1.0
    quant1_method: str = "cells"


def _outer_volume(G, R):
    n = G.grid.n
    return float(np.dot(G.grid.dir_weights, (np.maximum(G.kappa, R) ** n - R**n) / n))


def _discretizations(E, G, partial, cell_target=CELL_TARGET):
    """Lattices of a few cell sizes and offsets whose counts balance within 2%, in a fixed order."""
    n = G.grid.n
    vol = _outer_volume(G, E.R)
    h0 = (vol / cell_target) ** (1.0 / n)
    offsets = [np.zeros(n), np.full(n, 0.5), np.array([0.25, 0.75, 0.4][:n])]
    last = None
    for scale in (1.0, 0.93, 0.86, 1.08, 0.8):
        for off in offsets:
            try:
                d = discretize_sets(E, G, h0 * scale, off, partial=partial)
            except DiscretizationError as exc:
                last = exc
                continue
            if max(len(d.source_cells), len(d.target_cells)) <= MAX_CELLS:
                yield d
    if last is not None:
        raise last
    raise DiscretizationError("no admissible cell size found")


def _cell_displacement(d, partial):
    asg = assign_min_cost(d.source_cells, d.target_cells, d.cell_volume, partial=partial)
    disp = np.linalg.norm(asg.source_cells, axis=1) - np.linalg.norm(asg.images, axis=1)
    return d.cell_volume * float(np.sum(disp)), asg


def _quant1(E, G, lam, partial):
    """Cell value on the first balanced lattice and, for partial transport, the next one."""
    lattices = _discretizations(E, G, partial)
    d = next(lattices)
    q, asg = _cell_displacement(d, partial)
    q_alt = None
    if partial:
        try:
            q_alt = lam * _cell_displacement(next(lattices), partial)[0]
        except (StopIteration, DiscretizationError):
            pass
    return lam * q, d, asg, q_alt


def displacement_bounds(F, u, lam=None, G=None):
    """Lower bounds on ``delta``: set transport (cells) and ray transport (quadrature)."""
    grid = u.grid
    ctx = _context(F, grid)
    lam = ctx["lam"] if lam is None else lam
    E = ctx["profile"]
    G = radial.build_auxiliary(u, F.p) if G is None else G
    n, a, p = grid.n, F.a, F.p
    R = E.R

    # set transport G \ E -> E \ G
    polar = lam * float(np.dot(grid.dir_weights, (G.kappa ** (n + 1) - R ** (n + 1)) / (n + 1)))
    q1 = err1 = 0.0
    n_cells, discarded, inward, inside = 0, 0.0, 1.0, 1.0
    method = "cells"
    partial = G.volume < E.volume * (1 - 1e-6)
    try:
        cells = _quant1(E, G, lam, partial) if _outer_volume(G, R) > 1e-12 * E.volume else None
    except DiscretizationError:
        if partial:
            raise
        # equal volumes: the displacement integral does not depend on the map
        cells, q1, method = None, polar, "polar"
    if cells is not None:
        q1, d, asg, q_alt = cells
        n_cells, discarded = len(d.source_cells), d.discarded_fraction
        rep = verify_inward(asg, E, G)
        inward, inside = rep.inward_fraction, rep.target_inside_fraction
        if partial:
            # continuum value unknown for partial transport: use the spread between
            # two lattices, or the whole value when no second lattice balances
            err1 = 2.0 * abs(q1 - q_alt) if q_alt is not None else abs(q1)
        else:
            err1 = abs(q1 - polar)

    # ray transport u -> v along every direction; err2 is the deviation from the
    # map-independent identity int (r - T) dmu = int r dmu - a^p kappa^(n+1)/(n+1)
    disp, moment = ray_displacements(u, G.kappa, p)
    first = moment - a**p * G.kappa ** (n + 1) / (n + 1)
    q2 = lam / a**p * float(np.dot(grid.dir_weights, disp))
    err2 = lam / a**p * float(np.dot(grid.dir_weights, np.abs(disp - first)))
    return DisplacementBounds(lam, q1, err1, polar, q2, err2, n_cells, discarded, inward, inside, method)


def ray_displacements(u, kappa, p, batched=True):
    """Per direction ``int (r - T(r)) dmu`` and ``int r dmu`` for the ray maps u -> v."""
    if batched and u.kind == "step":
        return step_ray_displacements(u, kappa, p)
    grid = u.grid
    n, a = grid.n, u.a
    disp = np.zeros(grid.n_dir)
    moment = np.zeros(grid.n_dir)
    for i in range(grid.n_dir):
        if kappa[i] <= 0:
            continue
        tmap = monotone_transport_1d(ray_measure(u, i, p), indicator_measure(kappa[i], a, p, n, grid.R_max))
        disp[i] = integrate_source(tmap, lambda r, t: r - t)
        moment[i] = integrate_source(tmap, lambda r, t: r)
    return disp, moment


# ---------------------------------------------------------------------------
# directional masses


@dataclass(frozen=True)
class DirectionalMasses:
    kappa: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    identity_error: float


def directional_masses(u, p, G=None):
    """Split every ray mass of ``u**p`` at kappa: inside (tau1) and outside (tau2)."""
    grid = u.grid
    n = grid.n
    G = radial.build_auxiliary(u, p) if G is None else G
    k = G.kappa
    if u.kind == "step":
        lo, hi = u.breaks[:, :-1], u.breaks[:, 1:]
        c = u.levels**p
        kk = k[:, None]
        tau1 = np.sum(c * (np.minimum(hi, kk) ** n - np.minimum(lo, kk) ** n) / n, axis=1)
        tau2 = np.sum(c * (np.maximum(hi, kk) ** n - np.maximum(lo, kk) ** n) / n, axis=1)
    else:
        kk = k[:, None, None]
        tau1 = radial.ray_quadrature(grid, lambda r: u.at(r) ** p * (r <= kk), u.kinks(), k[:, None])
        tau2 = radial.ray_quadrature(grid, lambda r: u.at(r) ** p * (r > kk), u.kinks(), k[:, None])
    ident = float(np.max(np.abs(u.a**p * k**n / n - tau1 - tau2), initial=0.0))
    return DirectionalMasses(k, tau1, tau2, ident)


# ---------------------------------------------------------------------------
# full report


@dataclass(frozen=True)
class StabilityReport:
    family: str
    params: str
    n: int
    p: float
    a: float
    tau: float
    F_u: float
    F_v: float
    F_w: float
    delta: float
    tol_chain: float
    lam: float
    lhs: float
    rhs_core: float
    ratio: float
    quant1_rhs: float
    quant1_err: float
    quant2_rhs: float
    quant2_err: float
    step1_lhs: float
    step1_rhs_core: float
    step1_ratio: float
    step2_lhs: float
    step2_rhs_core: float
    step2_ratio: float
    branch: str
    inward_fraction: float = 1.0
    quad_error: float = 0.0
    quant1_method: str = "cells"

    @property
    def chain_ok(self):
        return self.F_v - self.F_u >= -self.tol_chain and self.F_w - self.F_v >= -self.tol_chain

    @property
    def quant1_ok(self):
        return self.delta + self.tol_chain + self.quant1_err >= self.quant1_rhs

    @property
    def quant2_ok(self):
        return self.delta + self.tol_chain + self.quant2_err >= self.quant2_rhs

    @property
    def lhs_bound_ok(self):
        return self.lhs <= 2.0**self.p * (1 + 1e-9)

    def csv_row(self):
        row = asdict(self)
        row["lambda"] = self.lam
        out = []
        for col in CSV_COLUMNS:
            v = row[col]
            out.append(f"{v:.17g}" if isinstance(v, float) else str(v))
        return out


def describe(F):
    return ";".join([F.family] + [f"{k}={v:g}" for k, v in sorted(F.params.items())])


def _safe_ratio(num, den, degenerate):
    if degenerate or den <= 0:
        return 0.0
    return num / den


def stability_report(F, u, family="", tau=float("nan"), lam=None, tol_scale=1.0, check_hypotheses=True):
    """Every quantity of the stability estimate for one competitor."""
    grid = u.grid
    ctx = _context(F, grid)
    lam = ctx["lam"] if lam is None else lam
    if lam <= 0:
        raise StabilityError("lambda = 0: no linear decay of F(., a) on the truncated domain")
    chain = chain_report(F, u, strict=False, tol_scale=tol_scale, check_hypotheses=check_hypotheses)
    E, w = ctx["profile"], ctx["w"]
    n, p, a, R = grid.n, F.p, F.a, E.R
    G = radial.build_auxiliary(u, p)
    v = G.as_function()
    bounds = displacement_bounds(F, u, lam=lam, G=G)

    delta = chain.delta
    # below the quadrature noise delta is treated as zero (0/0 guard)
    degenerate = delta <= 1e-13 * max(1.0, chain.F_w) + chain.quad_error
    d = max(delta, 0.0)
    lhs = radial.lp_distance(u, w, p)
    rhs_core = math.sqrt(d / lam)
    step1_lhs = radial.lp_distance(w, v, p) / a**p
    step1_rhs = max(math.sqrt(d * R ** (n - 1) / lam), d / (lam * R))
    step2_lhs = radial.lp_distance(u, v, p)
    step2_rhs = math.sqrt(a ** (p / n) * d / lam)
    return StabilityReport(
        family=family,
        params=describe(F),
        n=n,
        p=float(p),
        a=float(a),
        tau=float(tau),
        F_u=chain.F_u,
        F_v=chain.F_v,
        F_w=chain.F_w,
        delta=delta,
        tol_chain=chain.tol_chain,
        lam=lam,
        lhs=lhs,
        rhs_core=rhs_core,
        ratio=_safe_ratio(lhs, rhs_core, degenerate),
        quant1_rhs=bounds.quant1_rhs,
        quant1_err=bounds.quant1_err,
        quant2_rhs=bounds.quant2_rhs,
        quant2_err=bounds.quant2_err,
        step1_lhs=step1_lhs,
        step1_rhs_core=step1_rhs,
        step1_ratio=_safe_ratio(step1_lhs, step1_rhs, degenerate),
        step2_lhs=step2_lhs,
        step2_rhs_core=step2_rhs,
        step2_ratio=_safe_ratio(step2_lhs, step2_rhs, degenerate),
        branch="trivial" if d >= lam else "bound",
        inward_fraction=bounds.inward_fraction,
        quad_error=chain.quad_error,
        quant1_method=bounds.quant1_method,
    )


@dataclass(frozen=True)
class CalibratedConstant:
    value: float
    n: int
    p: float
    a: float
    runs: int


def calibrate_constant(reports, min_runs=10):
    """Largest observed ratio: an empirical lower bound for C(n, p, a)."""
    reports = list(reports)
    live = [r for r in reports if r.ratio > 0]
    if not live:
        raise StabilityError("every run has delta = 0; nothing to calibrate")
    tags = {(r.n, r.p, r.a) for r in live}
    if len(tags) > 1:
        raise ValueError(f"reports mix several (n, p, a) tags: {sorted(tags)}")
    if len(live) < min_runs:
        warnings.warn(
            f"only {len(live)} runs with delta > 0 (wanted {min_runs})", CalibrationWarning, stacklevel=2
        )
    n, p, a = tags.pop()
    return CalibratedConstant(max(r.ratio for r in live), n, p, a, len(live))
