"""Spherical-radial discretisation of R^n and the functionals built on it.

Integrals over R^n are written in polar form, a sum over unit directions of
radial integrals against ``r**(n-1)``. A competitor is stored ray by ray, in one
of three representations:

``step``
    piecewise constant along each ray, with explicit break radii. Radial
    integrals split exactly at the breaks, so indicator jumps cost nothing.
``smooth``
    a vectorised callable plus the radii where it is not smooth.
``sampled``
    bare node values, integrated with the composite Simpson rule.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from ._quad import integrate_intervals, nth_root, simpson_weights

TOL_MASS = 1e-6
DEFAULT_N_DIR = {1: 2, 2: 128, 3: 256}
SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


class ConfigurationError(ValueError):
    """Raised when the truncation radius cannot hold the maximiser."""


class ConstraintWarning(UserWarning):
    """Emitted when a competitor lies outside the admissible set X."""


def ball_volume(n, R):
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * R**n


def fibonacci_sphere(n_points):
    """Quasi-uniform unit vectors on S^2 (golden-angle spiral)."""
    k = np.arange(n_points, dtype=float) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n_points)
    azimuth = 2.0 * np.pi * k / ((1.0 + 5.0**0.5) / 2.0)
    return np.column_stack(
        [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)]
    )


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Direction set with surface weights plus a Simpson rule on [0, R_max]."""

    n: int
    R_max: float
    r_nodes: np.ndarray
    r_weights: np.ndarray
    directions: np.ndarray
    dir_weights: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_dir(self):
        return len(self.dir_weights)

    @property
    def h(self):
        return self.r_nodes[1] - self.r_nodes[0]

    @property
    def jac(self):
        """Radial Jacobian r**(n-1) at the nodes."""
        return self.r_nodes ** (self.n - 1)

    def ball_quadrature(self, f=None):
        """Simpson/direction quadrature of a radial function over B(0, R_max)."""
        vals = np.ones_like(self.r_nodes) if f is None else np.asarray(f(self.r_nodes), float)
        return float(np.sum(self.dir_weights) * np.sum(self.r_weights * vals * self.jac))


def build_grid(n, R_max, n_r=512, n_dir=None):
    """Build a :class:`RadialGrid`.

    ``n_r`` is the number of radial Simpson intervals (even, >= 16), so there are
    ``n_r + 1`` nodes including r = 0.
    """
    if n not in (1, 2, 3):
        raise ValueError(f"unsupported dimension n={n}")
    if not R_max > 0:
        raise ValueError("R_max must be positive")
    if n_r < 16 or n_r % 2:
        raise ValueError("n_r must be an even integer >= 16")
    if n == 1:
        directions = np.array([[1.0], [-1.0]])
    else:
        n_dir = DEFAULT_N_DIR[n] if n_dir is None else int(n_dir)
        if n_dir < 1:
            raise ValueError("n_dir must be >= 1")
        if n == 2:
            theta = 2.0 * np.pi * np.arange(n_dir) / n_dir
            directions = np.column_stack([np.cos(theta), np.sin(theta)])
        else:
            directions = fibonacci_sphere(n_dir)
    dir_weights = np.full(len(directions), SPHERE_AREA[n] / len(directions))
    r_nodes = np.linspace(0.0, R_max, n_r + 1)
    return RadialGrid(
        n=n,
        R_max=float(R_max),
        r_nodes=r_nodes,
        r_weights=simpson_weights(n_r, R_max / n_r),
        directions=directions,
        dir_weights=dir_weights,
    )


def _row_lookup(breaks, levels, r):
    """Evaluate step profiles at radii ``r`` of shape (n_dir, ...).

    Pieces are closed on the right, so a ball indicator equals a at its radius.
    """
    out = np.empty(r.shape)
    flat = r.reshape(r.shape[0], -1)
    res = out.reshape(r.shape[0], -1)
    K = levels.shape[1]
    for i in range(r.shape[0]):
        idx = np.searchsorted(breaks[i], flat[i], side="left") - 1
        res[i] = levels[i, np.clip(idx, 0, K - 1)]
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A competitor u sampled ray by ray on a :class:`RadialGrid`."""

    grid: RadialGrid
    a: float
    breaks: np.ndarray | None = None  # step: (n_dir, K+1); smooth: (n_dir, K) kinks
    levels: np.ndarray | None = None  # step only: (n_dir, K)
    func: Callable | None = None  # smooth only: func(r, rows) -> values
    samples: np.ndarray | None = None  # sampled only: (n_dir, n_nodes)

    @property
    def kind(self):
        if self.levels is not None:
            return "step"
        if self.func is not None:
            return "smooth"
        return "sampled"

    @classmethod
    def from_steps(cls, grid, a, breaks, levels):
        breaks = np.clip(np.asarray(breaks, dtype=float), 0.0, grid.R_max)
        levels = np.asarray(levels, dtype=float)
        if breaks.ndim == 1:
            breaks = np.broadcast_to(breaks, (grid.n_dir, breaks.size))
        if levels.ndim == 1:
            levels = np.broadcast_to(levels, (grid.n_dir, levels.size))
        if breaks.shape != (grid.n_dir, levels.shape[1] + 1):
            raise ValueError("breaks must have one more column than levels")
        if np.any(np.diff(breaks, axis=1) < 0):
            raise ValueError("breaks must be nondecreasing along each ray")
        _check_range(levels, a)
        breaks = breaks.copy()
        breaks[:, 0] = 0.0
        breaks[:, -1] = grid.R_max
        return cls(grid, float(a), breaks=breaks, levels=np.array(levels))

    @classmethod
    def from_function(cls, grid, a, func, kinks=()):
        kinks = np.asarray(kinks, dtype=float)
        if kinks.ndim < 2:
            kinks = np.broadcast_to(kinks.reshape(1, -1), (grid.n_dir, kinks.size))
        u = cls(grid, float(a), breaks=np.clip(kinks, 0.0, grid.R_max), func=func)
        _check_range(u.values, a)
        return u

    @classmethod
    def from_samples(cls, grid, a, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_dir, grid.r_nodes.size):
            raise ValueError("samples must have shape (n_dir, n_nodes)")
        _check_range(values, a)
        return cls(grid, float(a), samples=values)

    def at(self, r):
        """Evaluate u at radii ``r`` of shape (n_dir, ...), one row per direction."""
        r = np.asarray(r, dtype=float)
        if self.kind == "step":
            return _row_lookup(self.breaks, self.levels, r)
        if self.kind == "smooth":
            rows = np.arange(r.shape[0]).reshape((-1,) + (1,) * (r.ndim - 1))
            return np.asarray(self.func(r, rows), dtype=float)
        flat = r.reshape(r.shape[0], -1)
        return np.stack(
            [np.interp(flat[i], self.grid.r_nodes, self.samples[i]) for i in range(r.shape[0])]
        ).reshape(r.shape)

    @property
    def values(self):
        """u(nu_i, r_j) at every direction/node pair."""
        if self.kind == "sampled":
            return self.samples
        nodes = np.broadcast_to(self.grid.r_nodes, (self.grid.n_dir, self.grid.r_nodes.size))
        return self.at(nodes)

    def scaled(self, factor):
        """Return ``factor * u``; factor in [0, 1] keeps u inside [0, a]."""
        if self.kind == "step":
            return GridFunction(self.grid, self.a, breaks=self.breaks, levels=self.levels * factor)
        if self.kind == "smooth":
            f = self.func
            return GridFunction(
                self.grid, self.a, breaks=self.breaks, func=lambda r, rows: factor * f(r, rows)
            )
        return GridFunction(self.grid, self.a, samples=self.samples * factor)

    def kinks(self):
        """Per-direction radii where u may jump or lose smoothness, shape (n_dir, K)."""
        if self.kind == "step":
            return self.breaks[:, 1:-1]
        if self.kind == "smooth":
            return self.breaks
        return np.empty((self.grid.n_dir, 0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["direction", "radius", "value"])
            vals = self.values
            for i in range(self.grid.n_dir):
                for r, v in zip(self.grid.r_nodes, vals[i]):
                    writer.writerow([i, f"{r:.17g}", f"{v:.17g}"])


def _check_range(values, a):
    if np.any(values < 0) or np.any(values > a):
        raise ValueError("competitor values must lie in [0, a]")


# ---------------------------------------------------------------------------
# ray integration


def _knots(grid, *kink_sets):
    """Per-direction sorted knots: grid nodes plus every kink, shape (n_dir, M)."""
    parts = [np.broadcast_to(grid.r_nodes, (grid.n_dir, grid.r_nodes.size))]
    for k in kink_sets:
        k = np.asarray(k, dtype=float)
        if k.size:
            parts.append(np.clip(np.broadcast_to(k, (grid.n_dir, k.shape[-1])), 0.0, grid.R_max))
    return np.sort(np.concatenate(parts, axis=1), axis=1)


def ray_quadrature(grid, integrand, *kink_sets, k=8):
    """Per-direction integrals of ``integrand(r) * r**(n-1)`` over [0, R_max].

    ``integrand`` receives radii of shape (n_dir, M, k). The rule is Gauss on every
    interval between consecutive knots, so jumps placed at knots are exact.
    """
    knots = _knots(grid, *kink_sets)
    n = grid.n
    vals = integrate_intervals(
        knots[:, :-1], knots[:, 1:], lambda r: integrand(r) * r ** (n - 1), k=k
    )
    return vals.sum(axis=1)


def _step_pieces(u):
    b = u.breaks
    return b[:, :-1], b[:, 1:], u.levels


def ray_moments(u, h):
    """Per-direction ``int h(u(r nu)) r^(n-1) dr`` for a function ``h`` of the value."""
    grid = u.grid
    n = grid.n
    if u.kind == "step":
        lo, hi, lev = _step_pieces(u)
        return np.sum(h(lev) * (hi**n - lo**n) / n, axis=1)
    if u.kind == "smooth":
        return ray_quadrature(grid, lambda r: h(u.at(r)), u.kinks())
    return np.sum(grid.r_weights * h(u.samples) * grid.jac, axis=1)


def _antiderivative(F, grid):
    """Cumulative ``A(x) = int_0^x alpha(r) r^(n-1) dr`` on nodes + kinks of alpha."""
    key = ("A", F.family, tuple(sorted(F.params.items())), F.n)
    if key not in grid._cache:
        extra = [c for c in F.r_breaks if 0 < c < grid.R_max]
        knots = np.unique(np.concatenate([grid.r_nodes, extra]))
        n = grid.n

        def g(r):
            return F.alpha(r) * r ** (n - 1)

        fine = integrate_intervals(knots[:-1], knots[1:], g, k=8)
        coarse = integrate_intervals(knots[:-1], knots[1:], g, k=4)
        cum = np.concatenate([[0.0], np.cumsum(fine)])
        err = float(np.sum(np.abs(fine - coarse)))
        grid._cache[key] = (knots, cum, err, g)
    return grid._cache[key]


def radial_antiderivative(F, grid, x):
    """Evaluate ``A(x) = int_0^x alpha(r) r^(n-1) dr`` at arbitrary radii in [0, R_max]."""
    knots, cum, _, g = _antiderivative(F, grid)
    x = np.clip(np.asarray(x, dtype=float), 0.0, grid.R_max)
    idx = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)
    return cum[idx] + integrate_intervals(knots[idx], x, g)


def ray_functional(F, u, with_error=False):
    """Per-direction ``int F(r, u(r nu)) r^(n-1) dr``; optionally a quadrature error estimate."""
    grid = u.grid
    if u.kind == "step" and F.separable:
        lo, hi, lev = _step_pieces(u)
        beta = F.beta(lev)
        vals = np.sum(beta * (radial_antiderivative(F, grid, hi) - radial_antiderivative(F, grid, lo)), axis=1)
        if not with_error:
            return vals
        err = _antiderivative(F, grid)[2] * 2.0 * np.sum(np.abs(beta), axis=1)
        return vals, err
    if u.kind == "sampled":
        vals = np.sum(grid.r_weights * F(grid.r_nodes, u.samples) * grid.jac, axis=1)
        if not with_error:
            return vals
        half = u.samples[:, ::2]
        nr = grid.r_nodes[::2]
        if (nr.size - 1) % 2 == 0:
            w2 = simpson_weights(nr.size - 1, nr[1] - nr[0])
            coarse = np.sum(w2 * F(nr, half) * nr ** (grid.n - 1), axis=1)
            return vals, np.abs(vals - coarse) / 15.0
        return vals, np.abs(vals) * 1e-8
    kinks = [u.kinks(), np.asarray(F.r_breaks)[None, :] if F.r_breaks else np.empty((1, 0))]
    vals = ray_quadrature(grid, lambda r: F(r, u.at(r)), *kinks, k=8)
    if not with_error:
        return vals
    coarse = ray_quadrature(grid, lambda r: F(r, u.at(r)), *kinks, k=4)
    return vals, np.abs(vals - coarse)


# ---------------------------------------------------------------------------
# public operations


def lp_mass(u, p):
    """``int u^p`` over R^n in polar form."""
    return float(np.dot(u.grid.dir_weights, ray_moments(u, lambda v: v**p)))


def in_X(u, p, tol_mass=TOL_MASS):
    return lp_mass(u, p) <= 1.0 + tol_mass


def evaluate_functional(F, u):
    """Polar quadrature of ``F(|x|, u(x))``. Warns (does not raise) if u is not in X."""
    if not in_X(u, F.p):
        warnings.warn("competitor violates the mass constraint", ConstraintWarning, stacklevel=2)
    return float(np.dot(u.grid.dir_weights, ray_functional(F, u)))


def functional_with_error(F, u):
    vals, err = ray_functional(F, u, with_error=True)
    w = u.grid.dir_weights
    return float(np.dot(w, vals)), float(np.dot(w, err))


def lp_distance(u1, u2, p):
    """``int |u1 - u2|^p`` for two grid functions on the same grid."""
    grid = u1.grid
    n = grid.n
    if u1.kind == "step" and u2.kind == "step":
        b = np.sort(np.concatenate([u1.breaks, u2.breaks], axis=1), axis=1)
        lo, hi = b[:, :-1], b[:, 1:]
        mid = 0.5 * (lo + hi)
        diff = np.abs(u1.at(mid) - u2.at(mid)) ** p
        vals = np.sum(diff * (hi**n - lo**n) / n, axis=1)
    elif "sampled" in (u1.kind, u2.kind):
        diff = np.abs(u1.values - u2.values) ** p
        vals = np.sum(grid.r_weights * diff * grid.jac, axis=1)
    else:
        vals = ray_quadrature(
            grid, lambda r: np.abs(u1.at(r) - u2.at(r)) ** p, u1.kinks(), u2.kinks()
        )
    return float(np.dot(grid.dir_weights, vals))


@dataclass(frozen=True)
class BallProfile:
    """The maximiser's ball: radius R, height a and level t = F(R, a)."""

    R: float
    a: float
    p: float
    n: int
    t: float | None = None

    @property
    def volume(self):
        return ball_volume(self.n, self.R)


def ball_radius(n, a, p, F=None, R_max=None):
    """Radius of the ball E with ``a**p * |E| = 1``."""
    if n not in (1, 2, 3):
        raise ValueError(f"unsupported dimension n={n}")
    if not a > 0 or not p >= 1:
        raise ValueError("need a > 0 and p >= 1")
    R = (math.gamma(n / 2 + 1) / (math.pi ** (n / 2) * a**p)) ** (1.0 / n)
    if R_max is not None and R > R_max:
        raise ConfigurationError("truncation smaller than maximizer")
    t = None if F is None else float(F(R, a))
    return BallProfile(R=R, a=float(a), p=float(p), n=n, t=t)


def build_maximizer(profile, grid):
    """``w = a 1_E`` as a step function with its jump exactly at R."""
    if profile.R > grid.R_max:
        raise ConfigurationError("truncation smaller than maximizer")
    return GridFunction.from_steps(
        grid, profile.a, [0.0, profile.R, grid.R_max], [profile.a, 0.0]
    )


def ray_masses(u, p):
    """Per-direction ray mass ``int u(r nu)^p r^(n-1) dr``."""
    return ray_moments(u, lambda v: v**p)


def _kappa_from_mass(mass, a, p, n, R_max):
    k = nth_root(n * np.maximum(mass, 0.0) / a**p, n)
    return np.minimum(k, R_max)


def kappa(u, i, p):
    """Radius of the ball segment carrying the same ray mass as u along direction i."""
    mass = ray_masses(u, p)[i]
    return float(_kappa_from_mass(mass, u.a, p, u.grid.n, u.grid.R_max))


@dataclass(frozen=True, eq=False)
class RaySet:
    """Star-shaped set ``G = {|x| < kappa(x/|x|)}`` carrying ``v = a 1_G``."""

    grid: RadialGrid
    kappa: np.ndarray
    a: float
    p: float

    @property
    def volume(self):
        n = self.grid.n
        return float(np.dot(self.grid.dir_weights, self.kappa**n / n))

    def as_function(self):
        g = self.grid
        breaks = np.column_stack([np.zeros(g.n_dir), self.kappa, np.full(g.n_dir, g.R_max)])
        levels = np.column_stack([np.full(g.n_dir, self.a), np.zeros(g.n_dir)])
        return GridFunction.from_steps(g, self.a, breaks, levels)

    def kappa_at(self, x):
        """kappa evaluated in the direction of points ``x`` (shape (m, n)).

        Linear in angle between grid directions for n = 2, nearest direction for n = 3.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.grid.n
        if n == 1:
            return np.where(x[:, 0] >= 0, self.kappa[0], self.kappa[1])
        if n == 2:
            m = self.kappa.size
            theta = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi) * m / (2 * np.pi)
            j = np.floor(theta).astype(int) % m
            frac = theta - np.floor(theta)
            return (1 - frac) * self.kappa[j] + frac * self.kappa[(j + 1) % m]
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        unit = x / np.where(norms > 0, norms, 1.0)
        return self.kappa[_direction_tree(self.grid).query(unit)[1]]


def _direction_tree(grid):
    if "dir_tree" not in grid._cache:
        grid._cache["dir_tree"] = cKDTree(grid.directions)
    return grid._cache["dir_tree"]


def build_auxiliary(u, p):
    """Build the ray set G whose indicator matches u's ray masses direction by direction."""
    k = _kappa_from_mass(ray_masses(u, p), u.a, p, u.grid.n, u.grid.R_max)
    return RaySet(u.grid, k, u.a, float(p))
