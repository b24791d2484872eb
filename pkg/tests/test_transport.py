import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ballmax import radial, stability, transport
from ballmax.perturb import PerturbationSpec, generate
from ballmax.radial import GridFunction, ball_radius, build_auxiliary, build_grid
from ballmax.transport import (
    DiscretizationError,
    RayMeasure,
    TransportError,
    assign_min_cost,
    discretize_sets,
    indicator_measure,
    integrate_source,
    monotone_transport_1d,
    ray_measure,
    standard_test_functions,
    step_ray_displacements,
    verify_inward,
    verify_pushforward,
)

from conftest import make_setup


def annulus_map(n_r=512):
    grid = build_grid(2, 1.0, n_r, 8)
    u = GridFunction.from_steps(grid, 1.0, [0.0, 0.3, 0.5, 1.0], [0.0, 1.0, 0.0])
    src = ray_measure(u, 0, 2.0)
    tgt = indicator_measure(0.4, 1.0, 2.0, 2, grid.R_max)
    return monotone_transport_1d(src, tgt)


def brute_force_cost(src, tgt):
    cost = ((src[:, None, :] - tgt[None, :, :]) ** 2).sum(-1)
    rows = np.arange(len(src))
    return min(cost[rows, list(p)].sum() for p in itertools.permutations(range(len(tgt)), len(src)))


# ---------------------------------------------------------------------------
# 1D monotone maps


def test_identity_transport():
    grid = build_grid(1, 1.0, 64)
    u = GridFunction.from_steps(grid, 1.0, [0.0, 0.2, 0.7, 1.0], [0.0, 0.6, 0.0])
    m = ray_measure(u, 0, 2.0)
    tmap = monotone_transport_1d(m, m)
    on = tmap.source_density > 0
    assert np.allclose(tmap.map_values[on], tmap.source_nodes[on], atol=1e-14)
    assert all(c.rel_error <= 1e-14 for c in verify_pushforward(tmap))


def test_halving_map_from_sampled_densities():
    nodes = np.linspace(0.0, 1.0, 65)
    src = np.full_like(nodes, 0.5)
    tgt = np.where(nodes <= 0.5, 1.0, 0.0)
    # the trapezoid cumulative of a jump sampled on nodes is linear across one cell
    tgt[nodes == 0.5] = 1.0
    tmap = monotone_transport_1d(
        RayMeasure.from_samples(nodes, src),
        RayMeasure(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 0.5]), 1.0, lambda r: (r <= 0.5) * 1.0),
        nodes=nodes,
    )
    assert np.allclose(tmap.map_values, nodes / 2, atol=1e-15)


def test_annulus_map_closed_form():
    tmap = annulus_map()
    r = np.linspace(0.3, 0.5, 41)
    assert np.allclose(tmap(r), np.sqrt(r**2 - 0.09), atol=1e-14)
    assert tmap(0.5) == pytest.approx(0.4, abs=1e-15)
    mono, rng, dom = tmap.invariant_violations()
    assert (mono, rng, dom) == (0, 0, 0)
    assert tmap.range_max == pytest.approx(0.4)


def test_mass_mismatch_raises():
    grid = build_grid(2, 1.0, 64, 8)
    u = GridFunction.from_steps(grid, 1.0, [0.0, 0.3, 0.5, 1.0], [0.0, 1.0, 0.0])
    with pytest.raises(TransportError, match="mass mismatch"):
        monotone_transport_1d(ray_measure(u, 0, 2.0), indicator_measure(0.41, 1.0, 2.0, 2, 1.0))


def test_quantile_is_left_continuous_on_flat_spots():
    m = RayMeasure(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 1.0, 1.0, 2.0]), 1.0, None)
    assert m.quantile(1.0) == 1.0
    assert m.quantile(0.0) == 0.0
    assert m.quantile(1.5) == pytest.approx(2.5)
    assert m.quantile(5.0) == 3.0


def test_pushforward_constant_and_moment():
    tmap = annulus_map()
    checks = {c.name: c for c in verify_pushforward(tmap)}
    assert checks["one"].lhs == pytest.approx(0.08, abs=1e-14)
    assert checks["one"].rel_error < 1e-10
    # both sides of H(r) = r equal int_0^0.4 t^2 dt
    assert 0.4**3 / 3 == pytest.approx(0.021333, abs=1e-6)
    assert checks["r"].lhs == pytest.approx(0.4**3 / 3, abs=1e-14)
    assert checks["r"].rhs == pytest.approx(0.4**3 / 3, abs=1e-12)
    assert max(c.rel_error for c in checks.values()) <= 1e-10


def test_pushforward_custom_test_function():
    tmap = annulus_map()
    H = transport.TestFunction("cubic", lambda r: np.asarray(r) ** 3)
    (check,) = verify_pushforward(tmap, [H])
    assert check.lhs == pytest.approx(0.4**5 / 5, rel=1e-13)
    assert check.rel_error < 1e-10


def test_standard_test_functions():
    fs = standard_test_functions(0.8)
    assert [f.name for f in fs] == ["one", "r", "r2", "exp", "indicator"]
    assert fs[4](np.array([0.1, 0.3, 0.5, 0.7])).tolist() == [0.0, 1.0, 1.0, 0.0]


def test_pushforward_on_smooth_profile():
    F, grid, profile = make_setup(2, n_r=256, n_dir=8)
    u = generate(PerturbationSpec("smooth_bump", 0.3), profile, grid)
    G = build_auxiliary(u, 2.0)
    tmap = monotone_transport_1d(ray_measure(u, 3, 2.0), indicator_measure(G.kappa[3], 1.0, 2.0, 2, grid.R_max))
    assert max(c.rel_error for c in verify_pushforward(tmap)) <= 1e-6
    assert tmap.invariant_violations() == (0, 0, 0)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("family", ["translate_ball", "annulus", "random_rays", "scale_height"])
def test_batched_ray_displacements_match_per_ray_maps(n, family):
    F, grid, profile = make_setup(n, n_r=128, n_dir={1: None, 2: 16, 3: 24}[n])
    tau = 0.2 * profile.R if family == "translate_ball" else 0.3
    u = generate(PerturbationSpec(family, tau, seed=4), profile, grid)
    G = build_auxiliary(u, 2.0)
    d1, m1 = step_ray_displacements(u, G.kappa, 2.0)
    d2, m2 = stability.ray_displacements(u, G.kappa, 2.0, batched=False)
    assert np.allclose(d1, d2, rtol=0, atol=1e-13)
    assert np.allclose(m1, m2, rtol=0, atol=1e-13)


ray_levels = st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=2, max_size=7)


@given(
    n=st.sampled_from([1, 2, 3]),
    levels=ray_levels,
    cuts=st.lists(st.floats(0.0, 1.0), min_size=7, max_size=7),
    p=st.sampled_from([1.0, 2.0, 3.0]),
)
def test_map_invariants_on_random_rays(n, levels, cuts, p):
    grid = build_grid(n, 1.0, 64, 4)
    b = np.concatenate([[0.0], np.sort(cuts[: len(levels) - 1]), [1.0]])
    u = GridFunction.from_steps(grid, 1.0, b, levels)
    G = build_auxiliary(u, p)
    if G.kappa[0] == 0:
        return
    tmap = monotone_transport_1d(ray_measure(u, 0, p), indicator_measure(G.kappa[0], 1.0, p, n, 1.0))
    assert tmap.invariant_violations() == (0, 0, 0)
    assert tmap.range_max <= G.kappa[0] * (1 + 1e-12)
    d, m = step_ray_displacements(u, G.kappa, p)
    # map-independent identity for int (r - T) dmu
    assert d[0] == pytest.approx(m[0] - G.kappa[0] ** (n + 1) / (n + 1), rel=1e-12, abs=1e-15)
    assert d[0] >= -1e-14


def test_integrate_source_recovers_mass():
    tmap = annulus_map()
    assert integrate_source(tmap, lambda r, t: np.ones_like(r)) == pytest.approx(0.08, abs=1e-15)


# ---------------------------------------------------------------------------
# set transport


def _set_1d(k_plus, k_minus):
    grid = build_grid(1, 2.0, 64)
    return ball_radius(1, 1.0, 2.0), radial.RaySet(grid, np.array([k_plus, k_minus]), 1.0, 2.0)


def test_equal_sets_give_empty_lists():
    E, _ = _set_1d(0.5, 0.5)
    _, G = _set_1d(E.R, E.R)
    d = discretize_sets(E, G, 0.01)
    assert len(d.source_cells) == 0 and len(d.target_cells) == 0
    asg = assign_min_cost(d.source_cells, d.target_cells)
    assert verify_inward(asg, E, G).inward_fraction == 1.0


def test_interval_example():
    E, G = _set_1d(0.4, 0.6)
    d = discretize_sets(E, G, 0.01)
    s, t = d.source_cells.ravel(), d.target_cells.ravel()
    assert len(s) == len(t) == 10
    assert np.all((s > -0.6) & (s < -0.5))
    assert np.all((t > 0.4) & (t < 0.5))
    asg = assign_min_cost(d.source_cells, d.target_cells, d.cell_volume)
    rep = verify_inward(asg, E, G)
    assert rep.inward_fraction == 1.0 and rep.target_inside_fraction == 1.0
    assert np.all(np.abs(asg.images.ravel()) < np.abs(asg.source_cells.ravel()))


def test_excess_trimming_raises():
    E, G = _set_1d(0.55, 0.45)
    with pytest.raises(DiscretizationError):
        discretize_sets(E, G, 0.03)


def _shifted_disk(tau=0.1, n_dir=256):
    F, grid, profile = make_setup(2, n_r=256, n_dir=n_dir)
    u = generate(PerturbationSpec("translate_ball", tau), profile, grid)
    return profile, build_auxiliary(u, 2.0)


def test_shifted_disk_cells_cover_half_symmetric_difference():
    E, G = _shifted_disk()
    R, d = E.R, 0.1
    lens = 2 * R**2 * math.acos(d / (2 * R)) - d / 2 * math.sqrt(4 * R**2 - d**2)
    half = math.pi * R**2 - lens
    assert half == pytest.approx(0.1128, abs=5e-4)
    assert half == pytest.approx(2 * R * d, abs=d**3)
    disc = discretize_sets(E, G, 0.02)
    for cells in (disc.source_cells, disc.target_cells):
        assert len(cells) * disc.cell_volume == pytest.approx(half, rel=0.10)
        assert len(cells) <= transport.MAX_CELLS
    assert disc.discarded_fraction <= transport.MAX_DISCARD
    asg = assign_min_cost(disc.source_cells, disc.target_cells, disc.cell_volume)
    rep = verify_inward(asg, E, G)
    assert rep.inward_fraction == 1.0
    assert rep.target_inside_fraction == 1.0


def test_single_pair_cost():
    asg = assign_min_cost([[0.9, 0.0]], [[0.3, 0.0]])
    assert asg.pairing.tolist() == [0]
    assert asg.total_cost == pytest.approx(0.36)


def test_mirrored_pairs_do_not_cross():
    src = np.array([[1.0, 0.5], [1.0, -0.5]])
    tgt = np.array([[0.2, 0.5], [0.2, -0.5]])
    asg = assign_min_cost(src, tgt)
    crossed = ((src - tgt[[1, 0]]) ** 2).sum()
    straight = ((src - tgt) ** 2).sum()
    assert straight < crossed
    assert asg.pairing.tolist() == [0, 1]
    assert asg.total_cost == pytest.approx(straight)


def test_six_random_cells_match_enumeration(rng):
    src, tgt = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    asg = assign_min_cost(src, tgt)
    assert asg.total_cost == brute_force_cost(src, tgt)
    assert sorted(asg.pairing.tolist()) == list(range(6))


@given(st.integers(1, 7), st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]))
def test_polynomial_solver_matches_enumeration(k, seed, n):
    r = np.random.default_rng(seed)
    src, tgt = r.uniform(-1, 1, (k, n)), r.uniform(-1, 1, (k, n))
    old = transport.EXHAUSTIVE_LIMIT
    transport.EXHAUSTIVE_LIMIT = 0
    try:
        fast = assign_min_cost(src, tgt)
    finally:
        transport.EXHAUSTIVE_LIMIT = old
    assert fast.total_cost == pytest.approx(brute_force_cost(src, tgt), rel=1e-12, abs=1e-14)


def test_partial_assignment_matches_enumeration(rng):
    src, tgt = rng.normal(size=(3, 2)), rng.normal(size=(7, 2))
    asg = assign_min_cost(src, tgt, partial=True)
    assert asg.total_cost == pytest.approx(brute_force_cost(src, tgt), rel=1e-12)
    assert len(set(asg.pairing.tolist())) == 3


def test_assignment_argument_errors():
    with pytest.raises(ValueError, match="count mismatch"):
        assign_min_cost(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        assign_min_cost(np.zeros((401, 1)), np.zeros((401, 1)))


def test_assignment_csv(tmp_path, rng):
    asg = assign_min_cost(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)))
    asg.to_csv(tmp_path / "a.csv")
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x0", "x1", "y0", "y1", "cost"]
    assert sum(float(r[-1]) for r in rows[1:]) == pytest.approx(asg.total_cost)
