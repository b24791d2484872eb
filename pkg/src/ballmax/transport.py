"""Constructive transport maps: monotone rearrangement along rays and cell assignment.

Along a ray the optimal map between two absolutely continuous measures is the
monotone rearrangement ``T = Q_target o C_source``. In R^n the transport between
two sets is approximated by an exact minimum-cost assignment between equal-volume
lattice cells.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from ._quad import (
    gauss_legendre,
    integrate_intervals,
    integrate_intervals_branch,
    integrate_intervals_graded,
    nth_root,
)

MASS_TOL = 1e-8
MAX_CELLS = 400
MAX_DISCARD = 0.02
EXHAUSTIVE_LIMIT = 8


class TransportError(ValueError):
    """Raised when the two measures of a 1D transport carry different mass."""


class DiscretizationError(ValueError):
    """Raised when equalising cell counts would discard too many cells."""


# ---------------------------------------------------------------------------
# measures on a half-line


@dataclass(frozen=True, eq=False)
class RayMeasure:
    """An absolutely continuous measure on [0, R] given by its cumulative mass.

    The cumulative function is interpolated linearly in the coordinate
    ``y = r**power``; with ``power = n`` this is exact for densities of the
    form ``c * r**(n-1)``, i.e. for piecewise-constant profiles in polar form.
    With ``refine=True`` the cumulative is instead integrated from the nearest
    knot with Gauss and the quantile polished by Newton steps (smooth densities).
    ``breaks`` lists the radii where the density may jump, if known.
    """

    knots: np.ndarray
    cum: np.ndarray
    power: float
    density: Callable
    breaks: np.ndarray | None = None
    refine: bool = False

    def __post_init__(self):
        object.__setattr__(self, "_y", self.knots**self.power)

    @property
    def total(self):
        return float(self.cum[-1])

    def cdf(self, r):
        r = np.asarray(r, dtype=float)
        if not self.refine:
            return np.interp(r**self.power, self._y, self.cum)
        rc = np.clip(r, self.knots[0], self.knots[-1])
        j = np.clip(np.searchsorted(self.knots, rc, side="right") - 1, 0, self.knots.size - 2)
        k0 = self.knots[j]
        extra = integrate_intervals(k0, rc, self.density)
        return np.minimum(self.cum[j] + extra, self.cum[-1])

    def quantile(self, m):
        """Left-continuous generalised inverse: smallest r with cdf(r) >= m."""
        m = np.asarray(m, dtype=float)
        cum = self.cum
        y = self._y
        m = np.minimum(m, cum[-1])
        j = np.searchsorted(cum, m, side="left")
        j = np.clip(j, 1, cum.size - 1)
        c0, c1 = cum[j - 1], cum[j]
        span = np.where(c1 > c0, c1 - c0, 1.0)
        frac = np.clip((m - c0) / span, 0.0, 1.0)
        out = y[j - 1] + frac * (y[j] - y[j - 1])
        out = np.where(m <= cum[0], y[0], out)
        r = nth_root(out, self.power)
        if self.refine:
            lo, hi = self.knots[j - 1], self.knots[j]
            inside = (m > cum[0]) & (c1 > c0)
            for _ in range(4):
                d = np.asarray(self.density(r), dtype=float)
                step = np.where(inside & (d > 0), (self.cdf(r) - m) / np.where(d > 0, d, 1.0), 0.0)
                r = np.clip(r - step, lo, hi)
        return r

    def support_start(self):
        j = int(np.argmax(self.cum > 0)) if self.total > 0 else 0
        return float(self.knots[max(j - 1, 0)])

    @classmethod
    def from_samples(cls, nodes, density):
        """Generic measure from sampled densities (trapezoid cumulative, linear in r)."""
        nodes = np.asarray(nodes, dtype=float)
        density = np.asarray(density, dtype=float)
        if nodes.shape != density.shape or np.any(np.diff(nodes) <= 0):
            raise ValueError("need strictly increasing nodes and matching densities")
        if np.any(density < 0):
            raise ValueError("densities must be nonnegative")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(nodes))])
        return cls(nodes, cum, 1.0, lambda r: np.interp(r, nodes, density, right=0.0))


def indicator_measure(kappa, a, p, n, R_max):
    """Ray measure of ``v = a 1_[0, kappa]``: density ``a**p r**(n-1)`` on [0, kappa]."""
    kappa = float(kappa)
    knots = np.unique([0.0, kappa, float(R_max)])
    total = a**p * kappa**n / n
    cum = np.where(knots >= kappa, total, a**p * knots**n / n)

    def density(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= kappa, a**p * r ** (n - 1), 0.0)

    return RayMeasure(knots, cum, float(n), density, breaks=knots)


def ray_measure(u, i, p):
    """Measure ``u(r nu_i)**p r**(n-1) dr`` along direction i of a grid function."""
    grid = u.grid
    n = grid.n
    if u.kind == "sampled":
        return RayMeasure.from_samples(grid.r_nodes, u.samples[i] ** p * grid.jac)
    kinks = np.clip(u.kinks()[i], 0.0, grid.R_max)
    knots = np.unique(np.concatenate([grid.r_nodes, kinks]))
    breaks = np.unique(np.concatenate([[0.0, grid.R_max], kinks]))
    if u.kind == "step":
        b = u.breaks[i]
        c = u.levels[i] ** p
        lo, hi = b[:-1], b[1:]
        x = np.clip(knots[:, None], lo, hi)
        cum = np.sum(c * (x**n - lo**n) / n, axis=1)

        def density(r):
            r = np.asarray(r, dtype=float)
            idx = np.clip(np.searchsorted(b, r, side="left") - 1, 0, c.size - 1)
            return c[idx] * r ** (n - 1)

        return RayMeasure(knots, np.maximum.accumulate(cum), float(n), density, breaks=breaks)

    def density(r):
        r = np.asarray(r, dtype=float)
        rows = np.full(r.shape[:1] + (1,) * (r.ndim - 1), i) if r.ndim else i
        return np.asarray(u.func(r, rows), float) ** p * r ** (n - 1)

    cum = np.concatenate([[0.0], np.cumsum(integrate_intervals(knots[:-1], knots[1:], density))])
    return RayMeasure(knots, np.maximum.accumulate(cum), float(n), density, breaks=breaks, refine=True)


# ---------------------------------------------------------------------------
# 1D monotone map


@dataclass(frozen=True, eq=False)
class MonotoneMap1D:
    """Monotone transport of ``source`` onto ``target``, sampled at ``source_nodes``."""

    source: RayMeasure
    target: RayMeasure
    source_nodes: np.ndarray
    map_values: np.ndarray
    source_density: np.ndarray
    target_density: np.ndarray

    def __call__(self, r):
        return self.target.quantile(self.source.cdf(r))

    @property
    def range_max(self):
        return float(self.target.quantile(self.target.total))

    def invariant_violations(self):
        """Counts of stored-value violations: (monotonicity, range, T(r) <= r)."""
        T = self.map_values
        r = self.source_nodes
        on = self.source_density > 0
        mono = int(np.sum(np.diff(T) < 0))
        rng = int(np.sum((T < 0) | (T > self.range_max)))
        dom = int(np.sum(on & (T > r)))
        return mono, rng, dom


def monotone_transport_1d(source, target, nodes=None, mass_tol=MASS_TOL):
    """Monotone map pushing ``source`` onto ``target``.

    ``source`` and ``target`` are :class:`RayMeasure` objects, or sampled
    densities on ``nodes``. Where the source has no mass the map is the
    generalised inverse at the flat spot, i.e. an end point of the target support.
    """
    if not isinstance(source, RayMeasure):
        source = RayMeasure.from_samples(nodes, source)
    if not isinstance(target, RayMeasure):
        target = RayMeasure.from_samples(nodes, target)
    if abs(source.total - target.total) > mass_tol * max(1.0, source.total):
        raise TransportError(
            f"mass mismatch: source {source.total!r} vs target {target.total!r}"
        )
    r = source.knots if nodes is None else np.asarray(nodes, dtype=float)
    mass = source.cdf(r)
    T = target.quantile(mass)
    dens = np.asarray(source.density(r), dtype=float)
    # T(r) <= r exactly when the target has at least the source mass by r; if that
    # holds up to a few ulps of mass, T > r is quantile rounding (worst for
    # subnormal masses) and is clamped
    fuzz = (T > r) & (dens > 0) & (target.cdf(r) >= mass * (1 - 8 * np.finfo(float).eps))
    T = np.where(fuzz, r, T)
    return MonotoneMap1D(
        source=source,
        target=target,
        source_nodes=r,
        map_values=T,
        source_density=dens,
        target_density=np.asarray(target.density(r), dtype=float),
    )


@dataclass(frozen=True)
class TestFunction:
    """A radial test function H with the radii where it jumps."""

    name: str
    func: Callable
    breaks: tuple = ()

    def __call__(self, r):
        return self.func(r)


def standard_test_functions(kappa):
    """The five standard test functions; the indicator sits on [kappa/4, 3 kappa/4]."""
    lo, hi = 0.25 * kappa, 0.75 * kappa
    return [
        TestFunction("one", lambda r: np.ones_like(np.asarray(r, float))),
        TestFunction("r", lambda r: np.asarray(r, float)),
        TestFunction("r2", lambda r: np.asarray(r, float) ** 2),
        TestFunction("exp", lambda r: np.exp(-np.asarray(r, float))),
        TestFunction(
            "indicator",
            lambda r: ((np.asarray(r) >= lo) & (np.asarray(r) <= hi)).astype(float),
            (lo, hi),
        ),
    ]


def integrate_source(tmap, g, extra_knots=()):
    """``int g(r, T(r)) dmu_source(r)``.

    Gauss on the source knots plus ``extra_knots``. When the source cumulative is
    affine in ``y = r**n`` between density breaks and the target quantile is a
    power ``1/n`` of mass, each such segment is integrated in the variable
    ``y = ystar + D s**n`` with ``ystar`` where the affine cumulative would vanish;
    this keeps ``T`` smooth in s even when the mass before the segment is tiny.
    Otherwise only the onset segment is graded.
    """
    src = tmap.source
    knots = src.knots
    if len(extra_knots):
        knots = np.unique(np.concatenate([knots, np.asarray(extra_knots, float)]))
    lo, hi = knots[:-1], knots[1:]

    def f(r):
        return g(r, tmap(r)) * src.density(r)

    n = src.power
    if not src.refine and src.breaks is not None and n == tmap.target.power and n > 1:
        br = src.breaks
        seg = np.clip(np.searchsorted(br, 0.5 * (lo + hi), side="right") - 1, 0, br.size - 2)
        yb, ye = br[seg] ** n, br[seg + 1] ** n
        cb, ce = src.cdf(br[seg]), src.cdf(br[seg + 1])
        live = (ce > cb) & (hi > lo)
        slope = (ce - cb)[live] / (ye - yb)[live]
        ystar = np.minimum(yb[live] - cb[live] / slope, lo[live] ** n)
        return float(np.sum(integrate_intervals_branch(lo[live], hi[live], ystar, ye[live], f, n)))

    c = src.cdf(knots)
    onset = (c[:-1] <= 0) & (c[1:] > 0)
    if not np.any(onset):
        return float(np.sum(integrate_intervals(lo, hi, f)))
    j = int(np.argmax(onset))
    start = lo[j]
    end = hi[j]
    if src.breaks is not None:
        later = src.breaks[src.breaks > start]
        end = float(later[0]) if later.size else float(knots[-1])
    graded = (lo >= start) & (hi <= end)
    total = float(np.sum(integrate_intervals(lo[~graded], hi[~graded], f)))
    total += float(np.sum(integrate_intervals_graded(lo[graded], hi[graded], start, end, f, tmap.target.power)))
    return total


def step_ray_displacements(u, kappa, p, k=8):
    """Batched ray transport for a step profile u onto ``a 1_[0, kappa_i]``.

    Along every ray the monotone map is ``T = Q_v o C_u`` with the exact cumulative
    ``C_u`` of ``u**p r**(n-1)`` and the closed-form quantile of the indicator.
    Returns ``(int (r - T(r)) dmu_i, int r dmu_i)`` per direction.
    """
    grid = u.grid
    n, a = grid.n, u.a
    b = u.breaks
    c = u.levels**p
    m = b.shape[0]
    cumb = np.concatenate([np.zeros((m, 1)), np.cumsum(c * (b[:, 1:] ** n - b[:, :-1] ** n) / n, axis=1)], axis=1)
    knots = np.sort(np.concatenate([np.broadcast_to(grid.r_nodes, (m, grid.r_nodes.size)), b], axis=1), axis=1)
    lo, hi = knots[:, :-1], knots[:, 1:]
    # piece of every interval, found row by row through one flat search
    span = grid.R_max + 1.0
    shift = np.arange(m)[:, None] * span
    flat = np.searchsorted((b + shift).ravel(), (0.5 * (lo + hi) + shift).ravel())
    piece = np.clip(flat.reshape(lo.shape) - np.arange(m)[:, None] * b.shape[1] - 1, 0, c.shape[1] - 1)
    row = np.broadcast_to(np.arange(m)[:, None], lo.shape)
    cc = np.take_along_axis(c, piece, axis=1)
    live = (cc > 0) & (hi > lo)
    row, piece, lo, hi, cc = row[live], piece[live], lo[live], hi[live], cc[live]
    # on a piece the cumulative is cc (y - ystar) / n in y = r^n, so the variable
    # y = ystar + D s^n makes T linear in s even when ystar sits just below the piece
    ystar = b[row, piece] ** n - n * cumb[row, piece] / cc
    D = b[row, piece + 1] ** n - ystar
    # pieces whose y-extent underflows carry no representable mass
    keep = D > 0
    row, lo, hi, cc, ystar, D = row[keep], lo[keep], hi[keep], cc[keep], ystar[keep], D[keep]
    s_lo = nth_root(np.clip((lo**n - ystar) / D, 0.0, 1.0), n)[:, None]
    s_hi = nth_root(np.clip((hi**n - ystar) / D, 0.0, 1.0), n)[:, None]
    t, wts = gauss_legendre(k)
    sv = s_lo + (s_hi - s_lo) * t[None, :]
    ys = D[:, None] * sv**n
    x = nth_root(ystar[:, None] + ys, n)
    # dx = D s^(n-1) x^(1-n) ds and dmu = cc x^(n-1) dx
    dmu = (s_hi - s_lo) * cc[:, None] * D[:, None] * sv ** (n - 1) * wts[None, :]
    T = np.minimum(nth_root(cc[:, None] * ys / a**p, n), np.asarray(kappa, float)[row][:, None])
    disp = np.bincount(row, np.sum((x - T) * dmu, axis=1), minlength=m)
    moment = np.bincount(row, np.sum(x * dmu, axis=1), minlength=m)
    return disp, moment


def integrate_target(tmap, H):
    tgt = tmap.target
    knots = np.unique(np.concatenate([tgt.knots, np.asarray(getattr(H, "breaks", ()), float)]))
    knots = knots[(knots >= tgt.knots[0]) & (knots <= tgt.knots[-1])]
    return float(np.sum(integrate_intervals(knots[:-1], knots[1:], lambda s: H(s) * tgt.density(s))))


@dataclass(frozen=True)
class PushforwardCheck:
    name: str
    lhs: float
    rhs: float
    rel_error: float


def verify_pushforward(tmap, test_functions=None):
    """Compare ``int H dmu_target`` with ``int H(T) dmu_source`` for each test function."""
    if test_functions is None:
        test_functions = standard_test_functions(tmap.range_max)
    out = []
    for H in test_functions:
        jumps = np.asarray(getattr(H, "breaks", ()), float)
        pre = tmap.source.quantile(tmap.target.cdf(jumps)) if jumps.size else ()
        lhs = integrate_target(tmap, H)
        rhs = integrate_source(tmap, lambda r, t: H(t), pre)
        scale = abs(lhs)
        err = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
        out.append(PushforwardCheck(getattr(H, "name", repr(H)), lhs, rhs, err))
    return out


# ---------------------------------------------------------------------------
# set-to-set transport in R^n


@dataclass(frozen=True)
class SetDiscretization:
    source_cells: np.ndarray
    target_cells: np.ndarray
    cell_size: float
    cell_volume: float
    discarded_fraction: float
    raw_counts: tuple = (0, 0)


def _lattice(radius, h, n, offset):
    m = int(np.ceil(radius / h)) + 1
    ax = (np.arange(-m, m) + 0.5) * h
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) + np.asarray(offset, float) * h
    return pts[np.linalg.norm(pts, axis=1) <= radius]


def _trim(cells, dist, keep):
    if len(cells) <= keep:
        return cells
    order = np.argsort(-dist, kind="stable")[:keep]
    return cells[np.sort(order)]


def discretize_sets(E, G, cell_size, offset=None, partial=False):
    """Lattice cells of ``G \\ E`` (source) and ``E \\ G`` (target).

    Cells are classified by their centres. Surplus cells nearest to the set
    boundary are discarded until both lists have equal length; with
    ``partial=True`` surplus targets are kept (for competitors with
    ``|G| < |E|``) and only a source surplus is trimmed. A large target surplus
    is then reduced to the ``MAX_CELLS`` cells nearest the sources.
    """
    n = G.grid.n
    h = float(cell_size)
    offset = np.zeros(n) if offset is None else offset
    R = E.R
    radius = max(R, float(np.max(G.kappa))) + h
    x = _lattice(radius, h, n, offset)
    norm = np.linalg.norm(x, axis=1)
    k = G.kappa_at(x)
    src_mask = (norm < k) & (norm >= R)
    tgt_mask = (norm < R) & (norm >= k)
    src, tgt = x[src_mask], x[tgt_mask]
    d_src = np.minimum(norm[src_mask] - R, k[src_mask] - norm[src_mask])
    d_tgt = np.minimum(R - norm[tgt_mask], norm[tgt_mask] - k[tgt_mask])
    ns, nt = len(src), len(tgt)
    vol = h**n
    if ns == 0 or nt == 0:
        return SetDiscretization(np.empty((0, n)), np.empty((0, n)), h, vol, 0.0, (ns, nt))
    if partial:
        src = _trim(src, d_src, min(ns, nt))
        if nt > MAX_CELLS:
            # surplus targets stay unused; offer the assignment the ones nearest the sources
            gap = cKDTree(src).query(tgt)[0]
            tgt = tgt[np.sort(np.argsort(gap, kind="stable")[: max(MAX_CELLS, len(src))])]
        discarded = (ns - len(src)) / ns
    else:
        keep = min(ns, nt)
        src = _trim(src, d_src, keep)
        tgt = _trim(tgt, d_tgt, keep)
        discarded = (ns - len(src) + nt - len(tgt)) / (ns + nt)
    if discarded > MAX_DISCARD:
        raise DiscretizationError(
            f"equalising counts discards {discarded:.1%} of cells; use a smaller cell_size"
        )
    return SetDiscretization(src, tgt, h, vol, discarded, (ns, nt))


@dataclass(frozen=True)
class CellAssignment:
    source_cells: np.ndarray
    target_cells: np.ndarray
    cell_volume: float
    pairing: np.ndarray  # pairing[i] = target index of source cell i
    total_cost: float

    @property
    def images(self):
        return self.target_cells[self.pairing]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = self.source_cells.shape[1]
            w.writerow([f"x{j}" for j in range(n)] + [f"y{j}" for j in range(n)] + ["cost"])
            for x, y in zip(self.source_cells, self.images):
                w.writerow([f"{v:.17g}" for v in (*x, *y, float(np.sum((x - y) ** 2)))])


def _cost_matrix(src, tgt):
    return np.sum((src[:, None, :] - tgt[None, :, :]) ** 2, axis=-1)


def assign_min_cost(source_cells, target_cells, cell_volume=1.0, partial=False):
    """Exact minimum of ``sum |x - T(x)|^2`` over bijections (injections if ``partial``)."""
    src = np.asarray(source_cells, dtype=float)
    tgt = np.asarray(target_cells, dtype=float)
    ns, nt = len(src), len(tgt)
    if ns != nt and not (partial and ns <= nt):
        raise ValueError(f"count mismatch: {ns} source vs {nt} target cells")
    if max(ns, nt) > MAX_CELLS:
        raise ValueError(f"at most {MAX_CELLS} cells per side are supported")
    if ns == 0:
        return CellAssignment(src, tgt, cell_volume, np.empty(0, dtype=int), 0.0)
    cost = _cost_matrix(src, tgt)
    if nt <= EXHAUSTIVE_LIMIT:
        rows = np.arange(ns)
        best, best_perm = np.inf, None
        for perm in itertools.permutations(range(nt), ns):
            c = cost[rows, perm].sum()
            if c < best:
                best, best_perm = c, perm
        pairing = np.array(best_perm, dtype=int)
    else:
        rows, cols = linear_sum_assignment(cost)
        pairing = np.empty(ns, dtype=int)
        pairing[rows] = cols
    total = float(cost[np.arange(ns), pairing].sum())
    return CellAssignment(src, tgt, cell_volume, pairing, total)


@dataclass(frozen=True)
class InwardReport:
    n_pairs: int
    inward_fraction: float
    target_inside_fraction: float


def verify_inward(assignment, E, G=None):
    """Fraction of pairs with ``|T(x)| <= |x| + cell diameter`` and of images inside E \\ G."""
    m = len(assignment.source_cells)
    if m == 0:
        return InwardReport(0, 1.0, 1.0)
    n = assignment.source_cells.shape[1]
    diam = assignment.cell_volume ** (1.0 / n) * np.sqrt(n)
    x = np.linalg.norm(assignment.source_cells, axis=1)
    y_pts = assignment.images
    y = np.linalg.norm(y_pts, axis=1)
    inward = float(np.mean(y <= x + diam))
    inside = y < E.R
    if G is not None:
        inside &= y >= G.kappa_at(y_pts)
    return InwardReport(m, inward, float(np.mean(inside)))
