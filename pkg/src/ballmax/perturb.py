"""Admissible competitors: perturbations of the maximiser and random ray profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ._quad import integrate_intervals
from .radial import SPHERE_AREA, GridFunction, build_maximizer, lp_mass

FAMILIES = ("translate_ball", "dilate_ball", "scale_height", "annulus", "smooth_bump", "random_rays")
BALL_FAMILIES = FAMILIES[:5]

RANDOM_PIECES = 7


class InadmissibleError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    """Competitor family and size.

    ``tau`` is a distance for ``translate_ball`` (shift along the first axis) and a
    fraction of the ball radius R for every other family.
    """

    family: str
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InadmissibleError(f"unknown perturbation family {self.family!r}")
        if not self.tau >= 0:
            raise InadmissibleError("tau must be >= 0")


def smoothstep(t):
    """C^3 step from 0 (t <= -1) to 1 (t >= 1)."""
    t = np.asarray(t, dtype=float)
    out = np.array(t >= 1.0, dtype=float)
    band = np.abs(t) < 1.0
    x = (t[band] + 1.0) / 2.0
    # the polynomial maps [0, 1] onto [0, 1]; the clip only removes round-off
    out[band] = np.clip(x**4 * (35.0 + x * (-84.0 + x * (70.0 - 20.0 * x))), 0.0, 1.0)
    return out


def _translate(tau, R, a, grid):
    c = np.zeros(grid.n)
    c[0] = tau
    d = grid.directions @ c
    disc = d**2 - tau**2 + R**2
    root = np.sqrt(np.maximum(disc, 0.0))
    lo = np.maximum(d - root, 0.0)
    hi = np.maximum(d + root, 0.0)
    hi = np.where(disc > 0, hi, lo)
    m = grid.n_dir
    breaks = np.column_stack([np.zeros(m), lo, np.maximum(hi, lo), np.full(m, grid.R_max)])
    levels = np.tile([0.0, a, 0.0], (m, 1))
    return GridFunction.from_steps(grid, a, breaks, levels)


def _shell(r_in, r_out, level, a, grid):
    return GridFunction.from_steps(grid, a, [0.0, r_in, r_out, grid.R_max], [0.0, level, 0.0])


def _bump_mass(center, width, a, p, n):
    lo = max(center - width, 0.0)
    edges = np.concatenate([np.linspace(0.0, lo, 33), np.linspace(lo, center + width, 129)[1:]])

    def f(r):
        return (a * smoothstep((center - r) / width)) ** p * r ** (n - 1)

    return SPHERE_AREA[n] * float(np.sum(integrate_intervals(edges[:-1], edges[1:], f)))


def _smooth_bump(tau, R, a, p, grid):
    width = tau * R
    n = grid.n
    # the unit-mass center lies in [R - width, R + width]
    lo, hi = max(R - width, 0.0), R + width
    excess_lo, excess_hi = (_bump_mass(c, width, a, p, n) - 1.0 for c in (lo, hi))
    if excess_lo * excess_hi < 0:
        center = brentq(lambda c: _bump_mass(c, width, a, p, n) - 1.0, lo, hi, xtol=1e-15, rtol=1e-15)
    else:
        # bracket below round-off, any point in it is the root to working precision
        center = lo if excess_lo == 0 else hi if excess_hi == 0 else R
    if center + width > grid.R_max:
        raise InadmissibleError("smooth bump exceeds the truncation radius")

    def func(r, rows=None):
        return a * smoothstep((center - r) / width)

    kinks = [max(center - width, 0.0), center + width]
    return GridFunction.from_function(grid, a, func, kinks)


def _random_rays(tau, R, a, grid, seed):
    rng = np.random.default_rng(seed)
    m = grid.n_dir
    extent = min(R * (1.0 + tau), grid.R_max)
    inner = np.sort(rng.uniform(0.0, extent, size=(m, RANDOM_PIECES - 1)), axis=1)
    breaks = np.column_stack([np.zeros(m), inner, np.full(m, extent), np.full(m, grid.R_max)])
    choice = rng.integers(0, 3, size=(m, RANDOM_PIECES))
    levels = np.column_stack([np.array([0.0, 0.5 * a, a])[choice], np.zeros(m)])
    return GridFunction.from_steps(grid, a, breaks, levels)


def generate(spec, profile, grid):
    """Competitor of the requested family, rescaled into the mass ball if needed."""
    R, a, p = profile.R, profile.a, profile.p
    tau = float(spec.tau)
    fam = spec.family
    if fam in BALL_FAMILIES and tau == 0.0:
        return build_maximizer(profile, grid)
    if fam == "translate_ball":
        if tau >= grid.R_max - R:
            raise InadmissibleError("translation must satisfy tau < R_max - R")
        u = _translate(tau, R, a, grid)
    elif fam == "dilate_ball":
        if tau >= 1.0:
            raise InadmissibleError("dilation needs 0 <= tau < 1")
        u = _shell(0.0, R * (1.0 - tau), a, a, grid)
    elif fam == "scale_height":
        if tau > 1.0:
            raise InadmissibleError("height scaling needs 0 <= tau <= 1")
        u = _shell(0.0, R, (1.0 - tau) * a, a, grid)
    elif fam == "annulus":
        r_in = tau * R
        r_out = (R**grid.n + r_in**grid.n) ** (1.0 / grid.n)
        if r_out > grid.R_max:
            raise InadmissibleError("annulus exceeds the truncation radius")
        u = _shell(r_in, r_out, a, a, grid)
    elif fam == "smooth_bump":
        if tau > 1.0:
            raise InadmissibleError("smooth bump width needs 0 <= tau <= 1")
        u = _smooth_bump(tau, R, a, p, grid)
    else:
        u = _random_rays(tau, R, a, grid, spec.seed)
    mass = lp_mass(u, p)
    if mass > 1.0:
        u = u.scaled(min(1.0, (1.0 / mass) ** (1.0 / p)))
    return u
