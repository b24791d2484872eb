"""Numerical verification of ball maximisers for radially decreasing integral functionals.

Among ``0 <= u <= a`` with ``int u**p <= 1``, the functional ``int F(|x|, u(x)) dx``
is maximised by ``a`` times the indicator of a centred ball. The package builds the
competitor chain ``u -> v -> w`` with explicit transport maps and measures how far
near-maximisers sit from the ball.
"""

from .integrand import Integrand, evaluate, hypothesis_report, tabulated
from .perturb import PerturbationSpec, generate
from .radial import (
    BallProfile,
    GridFunction,
    RadialGrid,
    ball_radius,
    build_auxiliary,
    build_grid,
    build_maximizer,
    evaluate_functional,
    lp_mass,
)
from .stability import calibrate_constant, chain_report, stability_report
from .transport import assign_min_cost, monotone_transport_1d, verify_pushforward

__all__ = [
    "BallProfile",
    "GridFunction",
    "Integrand",
    "PerturbationSpec",
    "RadialGrid",
    "assign_min_cost",
    "ball_radius",
    "build_auxiliary",
    "build_grid",
    "build_maximizer",
    "calibrate_constant",
    "chain_report",
    "evaluate",
    "evaluate_functional",
    "generate",
    "hypothesis_report",
    "lp_mass",
    "monotone_transport_1d",
    "stability_report",
    "tabulated",
    "verify_pushforward",
]
