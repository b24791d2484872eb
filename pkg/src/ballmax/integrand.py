"""Integrands F(r, s) and numerical checks of their structural hypotheses.

Built-in families are separable, ``F(r, s) = alpha(r) * s**q``:

* ``power-decay``   alpha(r) = (1 + r)**(-m)
* ``linear-cutoff`` alpha(r) = max(c - r, 0)
* ``exponential``   alpha(r) = exp(-gamma * r)

A ``tabulated`` family interpolates a table of values bilinearly in (r, s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._quad import integrate_intervals

FAMILIES = ("power-decay", "linear-cutoff", "exponential", "tabulated")

TOL = 1e-10
TOL_STRICT = 1e-12

_DEFAULT_PARAMS = {
    "power-decay": {"m": 2.0},
    "linear-cutoff": {"c": 1.0},
    "exponential": {"gamma": 1.0},
    "tabulated": {},
}


class DomainError(ValueError):
    """Raised when F is evaluated outside r >= 0, 0 <= s <= a."""


@dataclass(frozen=True)
class Table:
    r_values: np.ndarray
    s_values: np.ndarray
    values: np.ndarray  # shape (len(r_values), len(s_values))

    def __post_init__(self):
        r = np.asarray(self.r_values, dtype=float)
        s = np.asarray(self.s_values, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (r.size, s.size):
            raise ValueError("table values must have shape (len(r_values), len(s_values))")
        if r.size < 2 or s.size < 2 or np.any(np.diff(r) <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError("table axes need at least 2 strictly increasing entries")
        if s[0] != 0.0 or np.any(v[:, 0] != 0.0):
            raise ValueError("tabulated F must satisfy F(r, 0) = 0")
        if np.any(v < 0):
            raise ValueError("tabulated F must be nonnegative")
        object.__setattr__(self, "r_values", r)
        object.__setattr__(self, "s_values", s)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Integrand:
    """An integrand F(r, s) together with the problem data (a, p, n)."""

    family: str
    params: dict = field(default_factory=dict)
    a: float = 1.0
    p: float = 2.0
    n: int = 1
    table: Table | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown integrand family {self.family!r}")
        if not self.a > 0:
            raise ValueError("amplitude cap a must be positive")
        if not self.p >= 1:
            raise ValueError("constraint exponent p must be >= 1")
        if self.n not in (1, 2, 3):
            raise ValueError("unsupported dimension")
        params = dict(_DEFAULT_PARAMS[self.family])
        params.update(self.params)
        if self.family == "tabulated":
            if self.table is None:
                raise ValueError("tabulated family needs a table")
            if abs(self.table.s_values[-1] - self.a) > 1e-12 * self.a:
                raise ValueError("table s axis must span [0, a]")
        else:
            params.setdefault("q", self.p)
            if params["q"] <= 0:
                raise ValueError("exponent q must be positive")
        object.__setattr__(self, "params", params)

    @property
    def separable(self):
        return self.family != "tabulated"

    @property
    def q(self):
        return self.params.get("q")

    @property
    def r_breaks(self):
        """Radii where F(., s) may fail to be smooth."""
        if self.family == "linear-cutoff":
            return (float(self.params["c"]),)
        if self.family == "tabulated":
            return tuple(float(r) for r in self.table.r_values)
        return ()

    def alpha(self, r):
        """Radial factor of a separable family."""
        r = np.asarray(r, dtype=float)
        fam = self.family
        if fam == "power-decay":
            return (1.0 + r) ** (-self.params["m"])
        if fam == "linear-cutoff":
            return np.maximum(self.params["c"] - r, 0.0)
        if fam == "exponential":
            return np.exp(-self.params["gamma"] * r)
        raise TypeError("tabulated integrands are not separable")

    def beta(self, s):
        return np.asarray(s, dtype=float) ** self.params["q"]

    def __call__(self, r, s):
        """Vectorised F(r, s) without domain checks."""
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.separable:
            return self.alpha(r) * self.beta(s)
        t = self.table
        r, s = np.broadcast_arrays(r, s)
        rc = np.clip(r, t.r_values[0], t.r_values[-1])
        sc = np.clip(s, 0.0, t.s_values[-1])
        interp = RegularGridInterpolator((t.r_values, t.s_values), t.values)
        pts = np.stack([rc.ravel(), sc.ravel()], axis=-1)
        return interp(pts).reshape(r.shape)


def tabulated(r_values, s_values, values, *, a=None, p=2.0, n=1):
    """Build a tabulated integrand; ``a`` defaults to the last s entry."""
    table = Table(r_values, s_values, values)
    a = float(table.s_values[-1]) if a is None else a
    return Integrand("tabulated", {}, a=a, p=p, n=n, table=table)


def evaluate(F, r, s):
    """Pointwise F(r, s) with the domain checks r >= 0 and 0 <= s <= a."""
    r_arr = np.asarray(r, dtype=float)
    s_arr = np.asarray(s, dtype=float)
    if np.any(r_arr < 0):
        raise DomainError("radius must be nonnegative")
    if np.any(s_arr < 0) or np.any(s_arr > F.a):
        raise DomainError(f"value must lie in [0, a] with a = {F.a}")
    out = F(r_arr, s_arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class H1Result:
    passed: bool
    violation: float
    strict_decrease: bool


@dataclass(frozen=True)
class ConditionResult:
    passed: bool
    violation: float


@dataclass(frozen=True)
class H2Result:
    passed: bool
    violation: float
    alpha_integral: float


@dataclass(frozen=True)
class HypothesisReport:
    h1_pass: bool
    h1_violation: float
    condition_pass: bool
    condition_violation: float
    strict_decrease_pass: bool
    lambda_hat: float
    h2_pass: bool | None = None
    h2_violation: float | None = None
    h2_alpha_integral: float | None = None

    @property
    def failed(self):
        """Names of failed hypotheses needed by the maximality argument."""
        out = []
        if not self.h1_pass:
            out.append("h1")
        if not self.condition_pass:
            out.append("condition")
        if self.h2_pass is False:
            out.append("h2")
        return out


def _grid(values, name):
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    return arr


def check_h1(F, r_grid, s_samples=None, tol=TOL, tol_strict=TOL_STRICT):
    """Check that F(., s) is non-increasing along ``r_grid`` for each sample s.

    Strict decrease is reported separately, at s = a only.
    """
    r = _grid(r_grid, "r_grid")
    s = _grid(np.linspace(0.0, F.a, 21) if s_samples is None else s_samples, "s_samples")
    if np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    if r.size < 2:
        return H1Result(True, 0.0, True)
    vals = F(r[:, None], s[None, :])
    rise = np.diff(vals, axis=0)
    worst = max(float(rise.max()), 0.0)
    fa = F(r, F.a)
    strict = bool(np.all(fa[:-1] > fa[1:] + tol_strict))
    return H1Result(worst <= tol, worst, strict)


def check_condition(F, r_grid, lambda_grid=None, tol=TOL):
    """Check the growth condition F(r, l*a) <= l**p * F(r, a) for l in [0, 1]."""
    r = _grid(r_grid, "r_grid")
    lam = _grid(np.linspace(0.0, 1.0, 21) if lambda_grid is None else lambda_grid, "lambda_grid")
    if lam.min() < 0 or lam.max() > 1:
        raise ValueError("lambda_grid must lie in [0, 1]")
    if F.separable:
        # alpha(r) (lam a)^q - lam^p alpha(r) a^q, factored to avoid rounding noise
        excess = F(r, F.a)[:, None] * (lam[None, :] ** F.q - lam[None, :] ** F.p)
    else:
        excess = F(r[:, None], lam[None, :] * F.a) - lam[None, :] ** F.p * F(r, F.a)[:, None]
    worst = max(float(excess.max()), 0.0)
    return ConditionResult(worst <= tol, worst)


def estimate_lambda(F, r_grid):
    """Smallest difference quotient (F(r_i,a) - F(r_j,a)) / (r_j - r_i), i < j, floored at 0.

    The infimum is taken over the given (truncated) grid only.
    """
    r = _grid(r_grid, "r_grid")
    if r.size < 2:
        raise ValueError("need at least 2 nodes to estimate lambda")
    if np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    f = F(r, F.a)
    best = np.inf
    # row blocks keep memory bounded for fine grids
    for start in range(0, r.size - 1, 256):
        i = np.arange(start, min(start + 256, r.size - 1))
        mask = np.arange(r.size)[None, :] > i[:, None]
        gap = np.where(mask, r[None, :] - r[i, None], 1.0)
        dq = (f[i, None] - f[None, :]) / gap
        best = min(best, float(np.min(dq, where=mask, initial=np.inf)))
    return max(best, 0.0)


def check_h2(F, alpha, beta, r_grid, s_samples=None, n=None, tol=TOL):
    """Domination F <= alpha(r) beta(s) on the grid, plus int_0^R alpha(r) r^(n-1) dr."""
    r = _grid(r_grid, "r_grid")
    s = _grid(np.linspace(0.0, F.a, 21) if s_samples is None else s_samples, "s_samples")
    n = F.n if n is None else n
    excess = F(r[:, None], s[None, :]) - np.asarray(alpha(r[:, None]), float) * np.asarray(
        beta(s[None, :]), float
    )
    worst = max(float(excess.max()), 0.0)
    nodes = np.concatenate([[0.0], r]) if r[0] > 0 else r
    integral = float(
        np.sum(integrate_intervals(nodes[:-1], nodes[1:], lambda x: alpha(x) * x ** (n - 1)))
    )
    return H2Result(worst <= tol, worst, integral)


def hypothesis_report(F, r_grid, s_samples=None, lambda_grid=None, alpha_beta=None, tol=TOL):
    """Run every check and collect the results in a :class:`HypothesisReport`."""
    h1 = check_h1(F, r_grid, s_samples, tol=tol)
    cond = check_condition(F, r_grid, lambda_grid, tol=tol)
    lam = estimate_lambda(F, r_grid)
    if alpha_beta is None and F.separable:
        alpha_beta = (F.alpha, F.beta)
    h2 = None
    if alpha_beta is not None:
        h2 = check_h2(F, alpha_beta[0], alpha_beta[1], r_grid, s_samples, tol=tol)
    return HypothesisReport(
        h1_pass=h1.passed,
        h1_violation=h1.violation,
        condition_pass=cond.passed,
        condition_violation=cond.violation,
        strict_decrease_pass=h1.strict_decrease,
        lambda_hat=lam,
        h2_pass=None if h2 is None else h2.passed,
        h2_violation=None if h2 is None else h2.violation,
        h2_alpha_integral=None if h2 is None else h2.alpha_integral,
    )
