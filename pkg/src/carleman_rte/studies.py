"""Desk-scale numerical studies.

Each function runs one self-contained experiment on the unit square with
the quadrant partition of 1 < |v| < 2 and returns plain numbers, so the
same code backs the acceptance suite and the scripts in ``scripts/``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .carleman import (
    build_cutoff,
    carleman_scan,
    cutoff_time_derivative,
    energy_balance,
    energy_check,
    fit_energy_constant,
    summarize_scan,
)
from .partition import SpatialBox, admissible_time_geometry, make_partition, minimal_time
from .stability import (
    ExperimentSetup,
    add_noise,
    noise_pattern,
    outflow_traces,
    ratio_bounds,
    reconstruct_sigma,
    source_experiment,
    twin_experiment,
)
from .transport import (
    Coefficients,
    SpatialGrid,
    TransportProblem,
    VelocityQuadrature,
    l2_norm,
    misfit_functional,
    sigma_gradient,
    solve_adjoint,
    solve_forward,
    trace_misfit,
)

S_WINDOW = np.linspace(1.0, 40.0, 391)


def quadrant(samples_per_cell=10_000):
    return make_partition(2, 1.0, 2.0, [4], samples_per_cell)


def _xy(grid):
    X = grid.centers()
    return X[..., 0], X[..., 1]


def sine2(grid):
    x, y = _xy(grid)
    return (np.sin(np.pi * x) * np.sin(np.pi * y)) ** 2


def gaussian(grid, center, width, amplitude=1.0):
    x, y = _xy(grid)
    return amplitude * np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * width**2))


def tiling_multi_hits(partition, n=100_000, seed=0):
    """Counts of uniform annulus samples hit by zero and by several cells."""
    d = partition.domain
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n, d.dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = (d.v0**d.dim + rng.uniform(size=n) * (d.v1**d.dim - d.v0**d.dim)) ** (1.0 / d.dim)
    hits = np.stack([c.contains(g * r[:, None]) for c in partition.cells]).sum(axis=0)
    return int(np.sum(hits == 0)), int(np.sum(hits > 1))


# -- manufactured solution ------------------------------------------------
def mms_error(n, v=(1.0, 0.5), T=0.5, cfl=0.9):
    """Error at t = T for u* = sin(pi x) t on a single velocity node."""
    grid = SpatialGrid.uniform(2, n)
    quad = VelocityQuadrature(np.array([v], float), np.ones(1), np.zeros(1, int), 1)
    x, _ = _xy(grid)
    probe = TransportProblem(grid, quad, Coefficients(0.0), T, cfl=cfl)
    t = probe.times
    # F = d_t u* + v.grad u* = sin(pi x) + t v_x pi cos(pi x)
    R = np.sin(np.pi * x)[None, None] + t[:, None, None, None] * v[0] * np.pi * np.cos(np.pi * x)[None, None]

    def g(xf, vq, tn):
        return np.broadcast_to(np.sin(np.pi * xf[:, 0]) * tn, (len(vq), len(xf)))

    prob = TransportProblem(grid, quad, Coefficients(0.0), T, a=0.0, g=g, f=1.0, R=R, cfl=cfl)
    traj = solve_forward(prob)
    exact = np.sin(np.pi * x) * T
    return l2_norm(traj.u[-1] - exact[None], grid, quad)


def mms_order(ns=(16, 32, 64)):
    """Errors and the least-squares slope of log(error) against log(h)."""
    errs = np.array([mms_error(n) for n in ns])
    h = 1.0 / np.asarray(ns, float)
    order = np.polyfit(np.log(h), np.log(errs), 1)[0]
    return errs, float(order)


# -- random linear-problem instances ----------------------------------------
def random_instance(rng, n=16, nonnegative=True, T=1.0):
    """Random smooth data (a, g, f, sigma, k) on the quadrant setup."""
    part = quadrant(2000)
    grid = SpatialGrid.uniform(2, n)
    quad = VelocityQuadrature.from_partition(part, 1, 2)
    c = rng.uniform(0.2, 0.8, (2, 2))
    a = gaussian(grid, c[0], rng.uniform(0.1, 0.3)) * rng.uniform(0.5, 2.0, (quad.nv, 1, 1))
    f = gaussian(grid, c[1], rng.uniform(0.1, 0.3)) * rng.uniform(0.0, 1.0)
    g = float(rng.uniform(0.0, 0.5))
    sigma = rng.uniform(0.0, 1.0) * (1 + 0.5 * sine2(grid))
    k = rng.uniform(0.0, 0.1, (quad.nv, quad.nv))
    if not nonnegative:
        a = a - 0.5 * a.mean()
        g = -g
    return grid, quad, Coefficients(sigma, k), dict(a=a, g=g, f=f), T


def superposition_defect(rng):
    grid, quad, coeffs, d1, T = random_instance(rng, nonnegative=False)
    _, _, _, d2, _ = random_instance(rng, nonnegative=False)

    def solve(d):
        return solve_forward(TransportProblem(grid, quad, coeffs, T, **d)).u

    both = {k: d1[k] + d2[k] for k in d1}
    u1, u2, u12 = solve(d1), solve(d2), solve(both)
    return float(np.max(np.abs(u12 - u1 - u2)) / max(1.0, np.max(np.abs(u12))))


def positivity_min(rng):
    grid, quad, coeffs, d, T = random_instance(rng)
    return float(solve_forward(TransportProblem(grid, quad, coeffs, T, **d)).u.min())


def gradient_fd_errors(seed=0, n=12, directions=5, eps=1e-4):
    """Relative gap between <grad J, d> and a central difference, per random direction."""
    part = quadrant(2000)
    grid = SpatialGrid.uniform(2, n)
    quad = VelocityQuadrature.from_partition(part, 1, 2)
    x = grid.centers()
    a = 1.0 + 0.5 * sine2(grid)
    truth = 0.5 + 0.3 * np.exp(-np.sum((x - 0.5) ** 2, axis=-1) / 0.02)
    kernel = np.full((quad.nv,) * 2, 0.05)

    def make(sig):
        return TransportProblem(grid, quad, Coefficients(sig, kernel), 1.0, a=a, g=1.0)

    ref = solve_forward(make(truth))
    observed = {s: ref.trace(s).copy() for s in grid.sides}

    def J(sig):
        traj = solve_forward(make(sig))
        return misfit_functional(traj, trace_misfit(traj, observed))

    sig = np.full(grid.shape, 0.5)
    prob = make(sig)
    traj = solve_forward(prob)
    grad = sigma_gradient(prob, traj, solve_adjoint(prob, traj, trace_misfit(traj, observed)))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(directions):
        d = rng.normal(size=grid.shape)
        fd = (J(sig + eps * d) - J(sig - eps * d)) / (2 * eps)
        out.append(abs(float(np.sum(grad * d)) - fd) / abs(fd))
    return out


# -- Carleman scan ----------------------------------------------------------
def carleman_problem(n, sigma0=2.0, k=0.05, T_factor=2.0, cfl=0.9):
    """Smooth source-driven problem used for the Carleman scan."""
    part = quadrant()
    box = SpatialBox.unit(2)
    T = T_factor * minimal_time(box, part)
    grid = SpatialGrid.uniform(2, n)
    quad = VelocityQuadrature.from_partition(part, 1, 2)
    x, y = _xy(grid)
    sigma = sigma0 * (1 + 0.3 * np.cos(np.pi * x) * np.cos(np.pi * y))
    prof = sine2(grid)
    prob = TransportProblem(
        grid, quad, Coefficients(sigma, np.full((quad.nv,) * 2, k)), T,
        a=prof, f=prof, R=lambda t: 1 + 0.5 * math.sin(2 * t), cfl=cfl,
    )
    return part, box, prob


def carleman_study(n, s_values=S_WINDOW):
    part, box, prob = carleman_problem(n)
    geom = admissible_time_geometry(box, part, prob.T, prob.dt)
    traj = solve_forward(prob)
    z, zg = cutoff_time_derivative(traj, build_cutoff(prob.T, geom.delta))
    reports = carleman_scan(prob, part, geom.beta, z, zg, s_values)
    return reports, summarize_scan(reports)


# -- energy estimates -------------------------------------------------------
def energy_ensemble(cfl=0.9, members=10, n=32, seed=3):
    """Energy reports for random smooth (a, f, sigma) with zero inflow."""
    part = quadrant()
    box = SpatialBox.unit(2)
    T = 2 * minimal_time(box, part)
    grid = SpatialGrid.uniform(2, n)
    quad = VelocityQuadrature.from_partition(part, 1, 2)
    x, y = _xy(grid)
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(members):
        c = rng.uniform(0.25, 0.75, (2, 2))
        w = rng.uniform(0.1, 0.2, 2)
        amp = rng.uniform(0.5, 1.5, 2)
        a = gaussian(grid, c[0], w[0], amp[0]) * np.sin(np.pi * x) * np.sin(np.pi * y)
        f = gaussian(grid, c[1], w[1], amp[1])
        sigma = rng.uniform(0.2, 1.0) * (1 + 0.3 * np.cos(np.pi * x) * np.cos(np.pi * y))
        prob = TransportProblem(
            grid, quad, Coefficients(sigma, np.full((quad.nv,) * 2, 0.05)), T,
            a=a, f=f, R=lambda t: 1 + 0.5 * math.sin(2 * t), cfl=cfl,
        )
        reports.append(energy_check(prob, solve_forward(prob)))
    return reports, fit_energy_constant(reports)


def dissipation_defect(n=32, T=1.0):
    """Max |E^{n+1} - E^n - predicted| for sigma = k = F = g = 0, and max increase of E."""
    part = quadrant()
    grid = SpatialGrid.uniform(2, n)
    quad = VelocityQuadrature.from_partition(part, 1, 2)
    prob = TransportProblem(grid, quad, Coefficients(0.0), T, a=gaussian(grid, (0.4, 0.6), 0.15))
    traj = solve_forward(prob)
    bal = energy_balance(prob, traj)
    defect = float(np.max(np.abs(bal["increment"] - bal["predicted"])))
    return defect, float(np.max(np.diff(bal["E"])))


# -- stability ----------------------------------------------------------------
def stability_setup(n=32, kernel=0.05, T_factor=2.0, M=2.0):
    part = quadrant()
    st = ExperimentSetup.build(part, n, T_factor=T_factor, M=M)
    if kernel:
        st.kernel = np.full((st.quadrature.nv,) * 2, kernel)
    return st


def background_sigma(grid):
    x, y = _xy(grid)
    return 0.5 + 0.2 * np.cos(np.pi * x) * np.cos(np.pi * y)


def epsilon_scan(epsilons=(1e-3, 1e-2, 1e-1), a0=0.2, setup=None):
    st = setup or stability_setup()
    s1 = background_sigma(st.grid)
    a = a0 + sine2(st.grid)
    bump = gaussian(st.grid, (0.5, 0.5), 0.1)
    return [twin_experiment(st, s1, s1 + e * bump, a, g=a0, a0=a0, meta={"epsilon": e}) for e in epsilons]


def identical_twin(a0=0.2, setup=None):
    st = setup or stability_setup()
    s1 = background_sigma(st.grid)
    return twin_experiment(st, s1, s1, a0 + sine2(st.grid), g=a0, a0=a0)


def floor_trend(a0_levels=(0.5, 0.1, 0.02), members=10, eps=0.05, width=0.08, seed=1, setup=None):
    """``[(a0, c_low, c_high)]`` over a shared set of random perturbation centres."""
    st = setup or stability_setup()
    s1 = background_sigma(st.grid)
    hump = sine2(st.grid)
    centers = np.random.default_rng(seed).uniform(0.15, 0.85, (members, 2))
    out = []
    for a0 in a0_levels:
        recs = [
            twin_experiment(st, s1, s1 + eps * gaussian(st.grid, c, width), a0 + hump, g=a0, a0=a0)
            for c in centers
        ]
        out.append((a0, *ratio_bounds(recs)))
    return out


def homogeneity_spread(lams=(-3.0, 0.5, 7.0), setup=None):
    """Max relative change of both record ratios under f -> lam f at a = 0."""
    st = setup or stability_setup()
    s1 = background_sigma(st.grid)
    f = gaussian(st.grid, (0.45, 0.55), 0.12)
    base = source_experiment(st, s1, f)
    worst = 0.0
    for lam in lams:
        r = source_experiment(st, s1, lam * f)
        for attr in ("ratio_data_lhs", "ratio_lhs_data"):
            b = getattr(base, attr)
            worst = max(worst, abs(getattr(r, attr) - b) / b)
    return worst


# -- reconstruction ---------------------------------------------------------
@dataclass
class ReconstructionStudy:
    runs: list
    slope: float
    intercept: float
    r2: float


def reconstruction_problem(n=32, T_factor=1.25):
    st = stability_setup(n, kernel=0.0, T_factor=T_factor, M=2.0)
    x, y = _xy(st.grid)
    box = ((x > 0.3) & (x < 0.6) & (y > 0.4) & (y < 0.7)).astype(float)
    truth = 0.5 + 0.5 * box
    a = 1.0 + 0.5 * sine2(st.grid)
    return st, truth, a, 1.0


def linear_fit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else math.nan
    return float(slope), float(intercept), r2


def reconstruction_study(noise_levels=(0.0, 0.005, 0.01, 0.02), iterations=200, seed=0, n=32):
    st, truth, a, g = reconstruction_problem(n)
    traj = solve_forward(st.problem(truth, a=a, g=g))
    pattern = noise_pattern(outflow_traces(traj), np.random.default_rng(seed))
    runs = []
    for level in noise_levels:
        obs = add_noise(traj, level, pattern=pattern)
        runs.append(reconstruct_sigma(st, obs, a, g, 0.5, iterations, truth, noise_level=level))
    noisy = [r for r in runs if r.noise_level > 0]
    if len(noisy) >= 2:
        slope, icpt, r2 = linear_fit([r.noise_level for r in noisy], [r.final_error for r in noisy])
    else:
        slope = icpt = r2 = math.nan
    return ReconstructionStudy(runs, slope, icpt, r2)
