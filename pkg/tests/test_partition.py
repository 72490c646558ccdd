import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carleman_rte.errors import NonPositiveKappa, TimeTooShort
from carleman_rte.partition import (
    SpatialBox,
    VelocityDomain,
    admissible_time_geometry,
    build_partition,
    cell_index,
    certify_kappa,
    check_time_geometry,
    from_spherical,
    gamma_extrema,
    make_partition,
    minimal_time,
    rotation_map,
    select_gammas,
    to_spherical,
)


def sample_annulus(rng, n, dim, v0=1.0, v1=2.0):
    """Uniform samples of the annulus by rejection from the bounding cube."""
    out = []
    while sum(len(o) for o in out) < n:
        v = rng.uniform(-v1, v1, (2 * n, dim))
        r = np.linalg.norm(v, axis=1)
        out.append(v[(r > v0) & (r < v1)])
    return np.concatenate(out)[:n]


def sample_closure(rng, cell, n):
    r = rng.uniform(*cell.radius, n)
    t = rng.uniform(*cell.theta, n)
    if cell.phi is None:
        return from_spherical(r, t)
    return from_spherical(r, t, rng.uniform(*cell.phi, n))


def brute_min(cell, gamma, n=10_000):
    """Min of gamma.v over dense samples of the closed cell boundary (2D)."""
    t = np.linspace(*cell.theta, n)
    pts = [from_spherical(r, t) for r in cell.radius]
    r = np.linspace(*cell.radius, n)
    pts += [from_spherical(r, np.full(n, th)) for th in cell.theta]
    return float(min((p @ gamma).min() for p in pts))


# -- build_partition ----------------------------------------------------------
def test_single_cell_covers_circle():
    p = build_partition(VelocityDomain(2, 1, 2), [1])
    assert p.m == 1
    assert p.cells[0].theta == (0.0, 2 * math.pi)


def test_quadrant_breaks():
    p = build_partition(VelocityDomain(2, 1, 2), [4])
    breaks = [c.theta[0] for c in p.cells] + [p.cells[-1].theta[1]]
    np.testing.assert_allclose(breaks, np.arange(5) * math.pi / 2)


def test_cell_areas_sum_to_annulus():
    p = build_partition(VelocityDomain(2, 1, 2), [8])
    total = 0.0
    for c in p.cells:
        # midpoint rule in (r, theta) with Jacobian r; exact for this integrand
        n = 64
        r = np.linspace(1, 2, n + 1)
        rm = 0.5 * (r[1:] + r[:-1])
        total += np.sum(rm * (1.0 / n)) * (c.theta[1] - c.theta[0])
    assert total == pytest.approx(3 * math.pi, rel=1e-10)


@pytest.mark.parametrize("counts", [[0], [-1], [4, 0]])
def test_bad_counts_rejected(counts):
    dim = len(counts) + 1
    with pytest.raises(ValueError):
        build_partition(VelocityDomain(dim, 1, 2), counts)


def test_index_formula_zero_based():
    counts = (4, 3)
    p = build_partition(VelocityDomain(3, 1, 2), counts)
    for c in p.cells:
        assert c.index == (c.l[0] - 1) + (c.l[1] - 1) * counts[0] == cell_index(c.l, counts)


@pytest.mark.parametrize("dim,counts", [(2, [4]), (2, [7]), (3, [4, 2]), (3, [6, 3])])
def test_tiling_no_multi_hits(dim, counts):
    p = make_partition(dim, 1.0, 2.0, counts, samples_per_cell=400)
    v = sample_annulus(np.random.default_rng(0), 100_000, dim)
    hits = np.stack([c.contains(v) for c in p.cells])
    assert np.all(hits.sum(axis=0) == 1)
    np.testing.assert_array_equal(np.argmax(hits, axis=0), p.cell_of(v))


def test_boundary_angle_goes_to_upper_cell():
    p = build_partition(VelocityDomain(2, 1, 2), [4])
    v = from_spherical(1.5, np.array([math.pi / 2]))
    assert [bool(c.contains(v)[0]) for c in p.cells] == [False, True, False, False]


# -- gammas and kappas ------------------------------------------------------------
def test_gamma_single_cell_points_along_pi():
    p = select_gammas(build_partition(VelocityDomain(2, 1, 2), [1]))
    np.testing.assert_allclose(p.gammas[0], [-1.5, 0.0], atol=1e-15)


def test_gamma_quadrant_direction():
    p = select_gammas(build_partition(VelocityDomain(2, 1, 2), [4]))
    _, theta = to_spherical(p.gammas[0])
    assert theta == pytest.approx(math.pi / 4)
    assert all(c.contains(g[None])[0] for c, g in zip(p.cells, p.gammas))


def test_gamma_3d_direction():
    p = select_gammas(build_partition(VelocityDomain(3, 1, 2), [4, 2]))
    r, theta, phi = to_spherical(p.gammas[0])
    assert (r, theta, phi) == pytest.approx((1.5, math.pi / 4, math.pi / 4))


def test_full_annulus_kappa_fails():
    with pytest.raises(NonPositiveKappa, match="refine"):
        make_partition(2, 1.0, 2.0, [1])


@pytest.mark.parametrize("L0", [4, 8])
def test_kappa_matches_brute_force(L0):
    p = make_partition(2, 1.0, 2.0, [L0])
    for c, g, k in zip(p.cells, p.gammas, p.kappas):
        oracle = brute_min(c, g)
        assert k <= oracle
        assert k == pytest.approx(oracle, rel=1e-6)
    # attained at the inner radius on the angular edges
    assert p.kappas[0] == pytest.approx(1.0 * 1.5 * math.cos(math.pi / L0), rel=1e-6)


def test_kappa_monotone_in_L0():
    ks = [make_partition(2, 1.0, 2.0, [L]).kappa_min for L in (4, 8, 16)]
    assert all(k > 0 for k in ks)
    assert ks[0] < ks[1] < ks[2]


@pytest.mark.parametrize("dim,counts", [(2, [4]), (2, [5]), (3, [4, 2]), (3, [6, 4])])
def test_kappa_sound_on_fresh_samples(dim, counts):
    p = make_partition(dim, 1.0, 2.0, counts)
    rng = np.random.default_rng(7)
    for c, g, k in zip(p.cells, p.gammas, p.kappas):
        v = sample_closure(rng, c, 100_000 // p.m)
        assert k <= float((v @ g).min())


@given(st.integers(min_value=5, max_value=40))
def test_kappa_positive_below_quarter_turn(L0):
    p = make_partition(2, 1.0, 2.0, [L0], samples_per_cell=200)
    assert np.all(p.kappas > 0)


def test_certify_needs_gammas():
    with pytest.raises(ValueError):
        certify_kappa(build_partition(VelocityDomain(2, 1, 2), [4]))


# -- minimal time -----------------------------------------------------------------
def test_minimal_time_corner_enumeration(quadrant, unit_square):
    prods = unit_square.corners() @ quadrant.gammas.T  # 4 corners x 4 cells
    oracle = (prods.max() - prods.min()) / quadrant.kappa_min
    assert minimal_time(unit_square, quadrant) == pytest.approx(oracle, rel=1e-14)
    assert gamma_extrema(unit_square, quadrant) == pytest.approx((prods.max(), prods.min()))
    assert oracle == pytest.approx(4.0, rel=1e-6)


def test_minimal_time_point_box(quadrant):
    # the numerator compares different cells, so it vanishes only at the origin
    assert minimal_time(SpatialBox((0.0, 0.0), (0.0, 0.0)), quadrant) == 0.0
    assert minimal_time(SpatialBox((0.3, 0.4), (0.3, 0.4)), quadrant) > 0.0


def test_minimal_time_gamma_scale_invariant(quadrant, unit_square):
    from dataclasses import replace

    scaled = certify_kappa(replace(quadrant, gammas=3.0 * quadrant.gammas))
    assert minimal_time(unit_square, scaled) == pytest.approx(minimal_time(unit_square, quadrant), rel=1e-12)


def test_minimal_time_speed_scaling_halves(quadrant, unit_square):
    # gamma and v both double, so kappa quadruples while the numerator doubles
    p2 = make_partition(2, 2.0, 4.0, [4])
    assert minimal_time(unit_square, p2) == pytest.approx(0.5 * minimal_time(unit_square, quadrant), rel=1e-9)


# -- time geometry ------------------------------------------------------------------
def test_time_geometry_accepts_twice_minimal(quadrant, unit_square):
    T = 2 * minimal_time(unit_square, quadrant)
    g = admissible_time_geometry(unit_square, quadrant, T)
    assert 0 < g.beta < g.kappa_min
    assert g.r_max - g.beta * T < g.r0 < g.r1 < g.r_min
    assert 0 < 2 * g.delta < T
    assert check_time_geometry(unit_square, quadrant, g, nt=200)
    # the weight sandwich on a fine (x, t) lattice
    xs = np.stack(np.meshgrid(np.linspace(0, 1, 21), np.linspace(0, 1, 21)), -1).reshape(-1, 2)
    gx = xs @ quadrant.gammas.T
    early = gx[None] - g.beta * np.linspace(0, g.delta, 50)[:, None, None]
    late = gx[None] - g.beta * np.linspace(T - 2 * g.delta, T, 50)[:, None, None]
    assert early.min() > g.r1 and late.max() < g.r0


def test_time_geometry_rejects_short(quadrant, unit_square):
    T_min = minimal_time(unit_square, quadrant)
    with pytest.raises(TimeTooShort, match=f"{T_min:.6g}"):
        admissible_time_geometry(unit_square, quadrant, 0.5 * T_min)


def test_time_geometry_point_box(quadrant):
    box = SpatialBox((0.0, 0.0), (0.0, 0.0))
    g = admissible_time_geometry(box, quadrant, 1.0)
    assert g.beta == pytest.approx(0.5 * quadrant.kappa_min)


@given(st.floats(min_value=1.05, max_value=6.0))
def test_time_geometry_any_admissible_factor(factor):
    p = make_partition(2, 1.0, 2.0, [4], samples_per_cell=500)
    box = SpatialBox.unit(2)
    g = admissible_time_geometry(box, p, factor * minimal_time(box, p))
    assert g.delta > 0


# -- rotation maps ---------------------------------------------------------------------
def test_rotation_identity(quadrant):
    v = from_spherical(np.array([1.2, 1.7]), np.array([0.3, 1.1]))
    np.testing.assert_array_equal(rotation_map(quadrant, 0, v), v)


def test_rotation_quarter_turn(quadrant):
    v = from_spherical(1.5, np.array([math.pi / 8]))
    w = rotation_map(quadrant, 1, v)
    assert to_spherical(w)[1][0] == pytest.approx(math.pi / 8 + math.pi / 2)
    assert quadrant.cells[1].contains(w)[0]


def test_rotation_rejects_outside(quadrant):
    with pytest.raises(ValueError):
        rotation_map(quadrant, 1, from_spherical(1.5, np.array([2.0])))


@pytest.mark.parametrize("dim,counts", [(2, [4]), (2, [6]), (3, [4, 2]), (3, [5, 3])])
def test_rotation_lands_in_cell_and_preserves_speed(dim, counts):
    p = make_partition(dim, 1.0, 2.0, counts, samples_per_cell=400)
    rng = np.random.default_rng(3)
    c0 = p.cells[0]
    lo = np.array([c0.theta[0]] + ([c0.phi[0]] if dim == 3 else []))
    hi = np.array([c0.theta[1]] + ([c0.phi[1]] if dim == 3 else []))
    ang = rng.uniform(lo + 1e-9, hi - 1e-9, (2000, dim - 1))
    r = rng.uniform(1.0 + 1e-9, 2.0 - 1e-9, 2000)
    v = from_spherical(r, *ang.T)
    for j in range(p.m):
        w = rotation_map(p, j, v)
        assert np.all(p.cells[j].contains(w))
        np.testing.assert_allclose(np.linalg.norm(w, axis=1), r, rtol=1e-14)
