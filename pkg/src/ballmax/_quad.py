"""Small quadrature helpers shared by the radial and transport modules."""

from functools import lru_cache

import numpy as np

GAUSS_ORDER = 8


@lru_cache(maxsize=None)
def gauss_legendre(k):
    """Nodes mapped to [0, 1] and matching weights for the k-point rule."""
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def integrate_intervals(lo, hi, f, k=GAUSS_ORDER):
    """Integrate ``f`` over every interval ``[lo, hi]`` with a k-point Gauss rule.

    ``lo`` and ``hi`` broadcast to a common shape ``S``; ``f`` receives points of
    shape ``S + (k,)`` and must return values of that shape. Returns shape ``S``.
    Zero-length intervals contribute exactly zero.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    t, w = gauss_legendre(k)
    width = hi - lo
    x = lo[..., None] + width[..., None] * t
    return width * np.sum(f(x) * w, axis=-1)


def integrate_intervals_graded(lo, hi, start, end, f, power, k=GAUSS_ORDER):
    """Gauss rule on ``[lo, hi]`` in the variable s with ``x = start + (end - start) s**power``.

    Every interval of a segment ``[start, end]`` shares one substitution, which
    removes a singularity of the form ``(x - start)**(1/power)`` from the whole
    segment rather than only from its first cell.
    """
    lo, hi, start, end = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (lo, hi, start, end)))
    span = np.where(end > start, end - start, 1.0)
    s_lo = np.clip((lo - start) / span, 0.0, 1.0) ** (1.0 / power)
    s_hi = np.clip((hi - start) / span, 0.0, 1.0) ** (1.0 / power)
    t, w = gauss_legendre(k)
    s = s_lo[..., None] + (s_hi - s_lo)[..., None] * t
    x = start[..., None] + span[..., None] * s**power
    jac = power * span[..., None] * s ** (power - 1)
    return (s_hi - s_lo) * np.sum(f(x) * jac * w, axis=-1)


def integrate_intervals_branch(lo, hi, ystar, yend, f, n, k=GAUSS_ORDER):
    """Gauss rule on ``[lo, hi]`` in s with ``x**n = ystar + (yend - ystar) s**n``.

    For integrands containing ``(x**n - ystar)**(1/n)`` this variable makes that
    factor linear in s, removing a branch point at or just below ``lo``.
    Requires ``ystar <= lo**n`` and ``yend >= hi**n``.
    """
    lo, hi, ystar, yend = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (lo, hi, ystar, yend)))
    span = np.where(yend > ystar, yend - ystar, 1.0)
    s_lo = nth_root(np.clip((lo**n - ystar) / span, 0.0, 1.0), n)
    s_hi = nth_root(np.clip((hi**n - ystar) / span, 0.0, 1.0), n)
    t, w = gauss_legendre(k)
    s = s_lo[..., None] + (s_hi - s_lo)[..., None] * t
    x = nth_root(ystar[..., None] + span[..., None] * s**n, n)
    jac = span[..., None] * s ** (n - 1) / np.where(x > 0, x, 1.0) ** (n - 1)
    return (s_hi - s_lo) * np.sum(f(x) * jac * w, axis=-1)


def integrate_intervals_onset(lo, hi, f, power, k=GAUSS_ORDER):
    """Graded rule on single intervals: ``x = lo + (hi - lo) s**power``."""
    return integrate_intervals_graded(lo, hi, lo, hi, f, power, k)


def nth_root(x, n):
    """Correctly rounded square and cube roots; ``x ** (1/n)`` loses ulps for tiny x."""
    x = np.asarray(x, dtype=float)
    if n == 1:
        return x
    if n == 2:
        return np.sqrt(x)
    if n == 3:
        return np.cbrt(x)
    return x ** (1.0 / n)


def simpson_weights(n_intervals, h):
    """Composite Simpson weights for ``n_intervals + 1`` equispaced nodes."""
    if n_intervals < 2 or n_intervals % 2:
        raise ValueError("composite Simpson needs an even number of intervals >= 2")
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0
