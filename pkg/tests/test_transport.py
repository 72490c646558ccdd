import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carleman_rte import studies
from carleman_rte.errors import BoundViolated, CflViolation, NonFiniteState, PositivityViolated
from carleman_rte.partition import make_partition
from carleman_rte.transport import (
    Coefficients,
    CompatibilityWarning,
    SpatialGrid,
    Trajectory,
    TransportProblem,
    VelocityQuadrature,
    collision_apply,
    collision_apply_blocked,
    collision_apply_transpose,
    l2_norm,
    misfit_functional,
    outflow_data_norm,
    residual,
    sigma_gradient,
    solve_adjoint,
    solve_forward,
    step_apply,
    step_transpose,
    trace_misfit,
    transport_apply,
    transport_apply_transpose,
)


def problem(grid, quad, sigma=0.0, kernel=None, T=0.5, **kw):
    return TransportProblem(grid, quad, Coefficients(sigma, kernel), T, **kw)


# -- grid and quadrature ------------------------------------------------------------
def test_grid_geometry(grid16):
    assert grid16.h == (1 / 16, 1 / 16)
    assert grid16.centers().shape == (16, 16, 2)
    assert grid16.face_centers((1, 1))[..., 1].max() == 1.0
    np.testing.assert_array_equal(grid16.normal((0, -1)), [-1, 0])


@pytest.mark.parametrize("dim,counts,na", [(2, [4], 2), (2, [8], 3), (3, [4, 2], (2, 2)), (3, [3, 3], (1, 2))])
def test_quadrature_cell_measures(dim, counts, na):
    p = make_partition(dim, 1.0, 2.0, counts, samples_per_cell=400)
    q = VelocityQuadrature.from_partition(p, 2, na)
    assert np.all(q.weights > 0)
    for c in p.cells:
        dth = c.theta[1] - c.theta[0]
        if dim == 2:
            exact = 0.5 * (4 - 1) * dth
        else:
            exact = (8 - 1) / 3 * dth * (math.cos(c.phi[0]) - math.cos(c.phi[1]))
        assert q.cell_measure(c.index) == pytest.approx(exact, rel=1e-8)
        assert np.all(c.contains(q.nodes[q.cell_nodes(c.index)]))
    assert q.weights.sum() == pytest.approx(p.domain.measure, rel=1e-8)


# -- forward solves ----------------------------------------------------------------------
def test_zero_data_zero_solution(grid16, quad8):
    assert np.all(solve_forward(problem(grid16, quad8)).u == 0.0)


def test_uniform_decay_first_order(quad8):
    s, T = 0.8, 0.5
    grid = SpatialGrid.uniform(2, 8)
    errs = []
    for cfl in (0.8, 0.4):
        prob = problem(grid, quad8, sigma=s, T=T, a=1.0, g=lambda x, v, t: np.full((len(v), len(x)), math.exp(-s * t)), cfl=cfl)
        traj = solve_forward(prob)
        errs.append(float(np.max(np.abs(traj.u[-1] - math.exp(-s * T)))))
    assert errs[0] < 0.01
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_mms_residual_matches_source():
    grid = SpatialGrid.uniform(2, 64)
    v = (1.0, 0.5)
    quad = VelocityQuadrature(np.array([v]), np.ones(1), np.zeros(1, int), 1)
    prob = TransportProblem(grid, quad, Coefficients(0.0), 0.5, g=lambda x, vq, t: np.sin(np.pi * x[:, 0])[None] * t)
    x = grid.centers()[..., 0]
    u = (np.sin(np.pi * x)[None, None] * prob.times[:, None, None, None])
    F = np.sin(np.pi * x)[None, None] + prob.times[:-1, None, None, None] * v[0] * np.pi * np.cos(np.pi * x)[None, None]
    # interior cells only: the inflow ghost sits on the face, half a cell away
    err = np.abs(residual(prob, u) - F)[..., 1:, 1:]
    assert np.max(err) < math.pi**2 * v[0] * 0.5 * grid.h[0]


def test_mms_order():
    errs, order = studies.mms_order()
    assert np.all(np.diff(errs) < 0)
    assert order >= 0.9


def test_residual_zero_on_solution(grid16, quad8):
    prob = problem(grid16, quad8, sigma=0.5, kernel=np.full((8, 8), 0.05), a=studies.sine2(grid16), f=1.0, g=0.2)
    traj = solve_forward(prob)
    assert np.max(np.abs(residual(prob, traj.u))) < 1e-11


def test_constants_are_steady(grid16, quad8):
    prob = problem(grid16, quad8, a=1.0, g=1.0)
    assert np.max(np.abs(residual(prob, np.ones((prob.nt + 1, 8, 16, 16))))) == 0.0


def test_residual_shape_mismatch(grid16, quad8):
    with pytest.raises(ValueError):
        residual(problem(grid16, quad8), np.zeros((3, 8, 16, 16)))


def test_cfl_violation(grid16, quad8):
    with pytest.raises(CflViolation):
        problem(grid16, quad8, dt=0.05, T=0.5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_detected(grid16, quad8):
    with pytest.raises(NonFiniteState):
        solve_forward(problem(grid16, quad8, sigma=1e7, a=1.0, T=2.0))


def test_bounds_enforced():
    with pytest.raises(BoundViolated):
        Coefficients(np.array([0.5, 3.0]), M=2.0).validate()
    with pytest.raises(BoundViolated):
        Coefficients(-0.1).validate()


def test_compatibility_warning(grid16, quad8):
    with pytest.warns(CompatibilityWarning):
        problem(grid16, quad8, a=1.0, g=0.0).check_compatibility()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        problem(grid16, quad8, a=1.0, g=1.0).check_compatibility()


def test_positivity_hypothesis_modes(grid16, quad8):
    assert problem(grid16, quad8, a=0.5).check_positivity(0.1) == "initial"
    assert problem(grid16, quad8, a=0.0, f=1.0, R=lambda t: 2.0 + t).check_positivity(0.1) == "source"
    with pytest.raises(PositivityViolated):
        problem(grid16, quad8, a=0.0, f=1.0, R=lambda t: 0.05).check_positivity(0.1)


@given(st.integers(0, 2**32 - 1))
def test_superposition(seed):
    assert studies.superposition_defect(np.random.default_rng(seed)) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_positivity_preserved(seed):
    assert studies.positivity_min(np.random.default_rng(seed)) >= 0.0


@given(st.integers(0, 2**32 - 1))
def test_dissipative_without_sources(seed):
    rng = np.random.default_rng(seed)
    grid, quad, _, d, T = studies.random_instance(rng)
    sigma = rng.uniform(0, 2) * studies.sine2(grid)
    traj = solve_forward(TransportProblem(grid, quad, Coefficients(sigma), T, a=d["a"]))
    norms = [l2_norm(un, grid, quad) for un in traj.u]
    assert np.all(np.diff(norms) <= 1e-14 * norms[0])


# -- collision ---------------------------------------------------------------------------
def test_collision_zero_kernel(quad8, rng):
    u = rng.normal(size=(8, 4, 4))
    assert np.all(collision_apply(u, None, quad8.weights) == 0)
    assert np.all(collision_apply(u, np.zeros((8, 8)), quad8.weights) == 0)


def test_collision_unit_kernel_gives_measure(quad8):
    out = collision_apply(np.ones((8, 3, 3)), np.ones((8, 8)), quad8.weights)
    np.testing.assert_allclose(out, 3 * math.pi, rtol=1e-12)


@pytest.mark.parametrize("spatial", [False, True])
def test_collision_blocked_equals_flat(quad8, rng, spatial):
    u = rng.normal(size=(8, 5, 5))
    k = rng.uniform(size=(8, 8, 5, 5) if spatial else (8, 8))
    flat = collision_apply(u, k, quad8.weights)
    blocked = collision_apply_blocked(u, k, quad8.weights, quad8.cell, quad8.m)
    np.testing.assert_allclose(blocked, flat, rtol=0, atol=1e-13 * np.abs(flat).max())


# -- boundary data ---------------------------------------------------------------------------
def test_data_norm_zero_and_steady(grid16, quad8):
    assert outflow_data_norm(solve_forward(problem(grid16, quad8)))[0] == 0.0
    steady = solve_forward(problem(grid16, quad8, a=2.0, g=2.0))
    assert np.abs(steady.u).max() > 0 and outflow_data_norm(steady)[0] == 0.0


@given(st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3))
def test_data_norm_homogeneous(lam):
    grid = SpatialGrid.uniform(2, 8)
    quad = VelocityQuadrature.from_partition(make_partition(2, 1, 2, [4], 500), 1, 2)
    traj = solve_forward(TransportProblem(grid, quad, Coefficients(0.3), 0.5, a=studies.sine2(grid)))
    d0 = outflow_data_norm(traj)[0]
    assert outflow_data_norm(traj.scaled(lam))[0] == pytest.approx(abs(lam) * d0, rel=1e-12)


def test_trace_is_adjacent_state(grid16, quad8):
    traj = solve_forward(problem(grid16, quad8, a=studies.sine2(grid16)))
    np.testing.assert_array_equal(traj.trace((0, 1)), traj.u[:, :, -1, :])
    assert traj.u.shape[0] == traj.nt + 1 == len(traj.t)


# -- adjoint -----------------------------------------------------------------------------------
def test_transpose_identities(grid16, quad8, rng):
    prob = problem(grid16, quad8, sigma=rng.uniform(size=(16, 16)), kernel=rng.uniform(size=(8, 8)))
    u, w = rng.normal(size=(2, 8, 16, 16))
    tol = 1e-12
    lhs, rhs = np.sum(transport_apply(u, quad8, grid16) * w), np.sum(u * transport_apply_transpose(w, quad8, grid16))
    assert lhs == pytest.approx(rhs, rel=tol)
    k = prob.kernel
    lhs = np.sum(collision_apply(u, k, quad8.weights) * w)
    assert lhs == pytest.approx(np.sum(u * collision_apply_transpose(w, k, quad8.weights)), rel=tol)
    assert np.sum(step_apply(prob, u) * w) == pytest.approx(np.sum(u * step_transpose(prob, w)), rel=tol)


def _inverse_setup(grid, quad, rng):
    x = grid.centers()
    a = 1.0 + 0.5 * studies.sine2(grid)
    truth = 0.5 + 0.3 * np.exp(-np.sum((x - 0.5) ** 2, axis=-1) / 0.02)

    def make(sig):
        return problem(grid, quad, sigma=sig, kernel=np.full((8, 8), 0.05), T=1.0, a=a, g=1.0)

    observed = {s: solve_forward(make(truth)).trace(s).copy() for s in grid.sides}
    return make, observed


def test_zero_misfit_zero_adjoint(grid16, quad8, rng):
    make, observed = _inverse_setup(grid16, quad8, rng)
    prob = make(0.5 + 0.3 * np.exp(-np.sum((grid16.centers() - 0.5) ** 2, axis=-1) / 0.02))
    traj = solve_forward(prob)
    mis = trace_misfit(traj, observed)
    assert misfit_functional(traj, mis) == 0.0
    assert np.all(solve_adjoint(prob, traj, mis) == 0.0)


def test_gradient_matches_finite_differences(quad8, rng):
    grid = SpatialGrid.uniform(2, 12)
    make, observed = _inverse_setup(grid, quad8, rng)
    sig = np.full(grid.shape, 0.5)

    def J(s):
        traj = solve_forward(make(s))
        return misfit_functional(traj, trace_misfit(traj, observed))

    prob = make(sig)
    traj = solve_forward(prob)
    grad = sigma_gradient(prob, traj, solve_adjoint(prob, traj, trace_misfit(traj, observed)))
    for _ in range(5):
        d = rng.normal(size=grid.shape)
        eps = 1e-4
        fd = (J(sig + eps * d) - J(sig - eps * d)) / (2 * eps)
        assert np.sum(grad * d) == pytest.approx(fd, rel=1e-4)
