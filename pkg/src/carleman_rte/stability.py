"""Twin experiments for the both-sided stability estimates and an adjoint
gradient reconstruction of the absorption coefficient."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEnsemble, LineSearchStalled, PositivityViolated, TimeTooShort
from .partition import SpatialBox, VelocityPartition, minimal_time
from .transport import (
    Coefficients,
    SpatialGrid,
    Trajectory,
    TransportProblem,
    VelocityQuadrature,
    gradient_norm,
    l2_norm,
    misfit_functional,
    outflow_data_norm,
    outflow_weights,
    sigma_gradient,
    solve_adjoint,
    solve_forward,
    trace_misfit,
)


@dataclass
class ExperimentSetup:
    """Everything shared by the members of an ensemble."""

    partition: VelocityPartition
    grid: SpatialGrid
    quadrature: VelocityQuadrature
    T: float
    kernel: np.ndarray | None = None
    dt: float | None = None
    cfl: float = 0.9
    M: float | None = None

    @classmethod
    def build(cls, partition, n_cells, T=None, T_factor=2.0, n_radial=1, n_angular=2, box=None, **kw):
        box = box or SpatialBox.unit(partition.domain.dim)
        grid = SpatialGrid(box, (n_cells,) * partition.domain.dim)
        quad = VelocityQuadrature.from_partition(partition, n_radial, n_angular)
        if T is None:
            T = T_factor * minimal_time(box, partition)
        return cls(partition, grid, quad, float(T), **kw)

    @property
    def T_min(self):
        return minimal_time(self.grid.box, self.partition)

    def check_time(self):
        if self.T <= self.T_min:
            raise TimeTooShort(self.T, self.T_min)

    def problem(self, sigma, a=None, g=None, f=None, R=None) -> TransportProblem:
        coeffs = Coefficients(np.asarray(sigma, dtype=float), self.kernel, self.M)
        coeffs.validate()
        return TransportProblem(
            self.grid, self.quadrature, coeffs, self.T, a=a, g=g, f=f, R=R, dt=self.dt, cfl=self.cfl
        )

    def norm(self, field_):
        return l2_norm(field_, self.grid, self.quadrature)

    def grad_norm(self, field_):
        return gradient_norm(field_, self.grid, self.quadrature)


@dataclass
class StabilityRecord:
    kind: str
    lhs: float  # ||sigma1 - sigma2|| or ||f||
    data_norm: float  # d0 of the (difference) trajectory
    init_terms: float  # ||a|| + ||grad a|| of the (difference) initial data
    meta: dict = field(default_factory=dict)

    @property
    def ratio_data_lhs(self):
        """data / (lhs + init): bounded by 1 in the second estimate."""
        den = self.lhs + self.init_terms
        return self.data_norm / den if den > 0 else math.nan

    @property
    def ratio_lhs_data(self):
        """lhs / (data + init): bounded by C(M, a0) in the first estimate."""
        den = self.data_norm + self.init_terms
        return self.lhs / den if den > 0 else math.nan


def _floor_check(a, a0, quad_nv, shape):
    a_arr = np.broadcast_to(np.asarray(a, dtype=float), (quad_nv,) + shape)
    if a0 is not None and not np.all(a_arr >= a0):
        raise PositivityViolated(f"min a = {a_arr.min():.6g} below the floor a0 = {a0:.6g}")


def twin_trajectories(setup, sigma1, sigma2, a, g=None, a2=None):
    """Solve both coefficient problems; return ``(u1, u2)``."""
    p1 = setup.problem(sigma1, a=a, g=g)
    p2 = setup.problem(sigma2, a=a if a2 is None else a2, g=g)
    return solve_forward(p1), solve_forward(p2)


def twin_experiment(setup: ExperimentSetup, sigma1, sigma2, a, g=None, a0=None, a2=None, meta=None):
    """Both sides of the coefficient stability estimate for one pair.

    ``a`` is the initial state of the first system (and of the second too
    unless ``a2`` is given); it must exceed ``a0`` when a floor is given.
    """
    setup.check_time()
    nv, shape = setup.quadrature.nv, setup.grid.shape
    if a0 is not None:
        try:
            _floor_check(a, a0, nv, shape)
        except PositivityViolated:
            if a2 is None:
                raise
            _floor_check(a2, a0, nv, shape)
    u1, u2 = twin_trajectories(setup, sigma1, sigma2, a, g, a2)
    diff = u1 - u2
    d0, _ = outflow_data_norm(diff)
    s1 = np.broadcast_to(np.asarray(sigma1, float), (nv,) + shape)
    s2 = np.broadcast_to(np.asarray(sigma2, float), (nv,) + shape)
    da = diff.u[0]
    return StabilityRecord(
        "twin",
        setup.norm(s1 - s2),
        d0,
        setup.norm(da) + setup.grad_norm(da),
        dict(meta or {}),
    )


def reduction_residual(setup, sigma1, sigma2, a, g=None, a2=None):
    """Residual of the subtracted system.

    Solves both coefficient problems, then evaluates the scheme residual of
    ``u1 - u2`` for the source problem with sigma = sigma1, f = sigma1 -
    sigma2, R = -u2, a = a1 - a2, g = 0.  Returns ``(residual, u1, u2)``.
    """
    from .transport import residual

    u1, u2 = twin_trajectories(setup, sigma1, sigma2, a, g, a2)
    diff = u1 - u2
    f = np.asarray(sigma1, float) - np.asarray(sigma2, float)
    prob = setup.problem(sigma1, a=diff.u[0], g=None, f=f, R=-u2.u)
    return residual(prob, diff.u), u1, u2


def source_experiment(setup: ExperimentSetup, sigma, f, R=None, a=None, a0=None, meta=None, return_trajectory=False):
    """Single solve of the source problem with zero inflow; both estimate sides."""
    setup.check_time()
    prob = setup.problem(sigma, a=a, g=None, f=f, R=R)
    if a0 is not None:
        prob.check_positivity(a0)
    traj = solve_forward(prob)
    d0, _ = outflow_data_norm(traj)
    a_field = traj.u[0]
    rec = StabilityRecord(
        "source",
        setup.norm(prob.f_field),
        d0,
        setup.norm(a_field) + setup.grad_norm(a_field),
        dict(meta or {}),
    )
    return (rec, traj) if return_trajectory else rec


def ratio_bounds(records, min_records=10):
    """``(c_low, c_high)`` = (min data/lhs, max lhs/data) over records with lhs > 0."""
    use = [r for r in records if r.lhs > 0 and r.data_norm > 0]
    if len(use) < min_records:
        raise DegenerateEnsemble(f"need >= {min_records} records with nonzero lhs and data, got {len(use)}")
    c_low = min(r.ratio_data_lhs for r in use)
    c_high = max(r.ratio_lhs_data for r in use)
    return c_low, c_high


# -- reconstruction -------------------------------------------------------
@dataclass
class ReconstructionRun:
    sigmas: list  # iterates, first is the initial guess
    J: list
    errors: list  # relative L2 error per iterate (empty without a ground truth)
    steps: list
    noise_level: float = 0.0
    status: str = "max-iterations"

    @property
    def sigma(self):
        return self.sigmas[-1]

    @property
    def final_error(self):
        return self.errors[-1] if self.errors else math.nan

    @property
    def iterations(self):
        return len(self.sigmas) - 1


def outflow_traces(traj: Trajectory):
    return {s: traj.trace(s).copy() for s in traj.grid.sides}


def noise_pattern(traces, rng):
    """One standard normal draw per trace entry (reused across noise levels)."""
    return {s: rng.standard_normal(v.shape) for s, v in traces.items()}


def add_noise(traj: Trajectory, level, rng=None, pattern=None):
    """Noisy copy of the boundary traces of ``traj``.

    The noise is i.i.d. Gaussian on the trace values, added before time
    differencing.  Its scale is set so that the weighted outflow norm of the
    differenced noise equals ``level`` times the data norm d0, i.e. ``level``
    is the relative noise of the measured d_t traces.
    """
    traces = outflow_traces(traj)
    if level == 0:
        return traces
    if pattern is None:
        pattern = noise_pattern(traces, np.random.default_rng() if rng is None else rng)
    W = outflow_weights(traj.grid, traj.quadrature, traj.dt)
    d2 = sum(np.sum(W[s] * traj.dt_trace(s) ** 2) for s in traces)
    n2 = sum(np.sum(W[s] * (np.diff(pattern[s], axis=0) / traj.dt) ** 2) for s in traces)
    c = level * math.sqrt(d2 / n2)
    return {s: v + c * pattern[s] for s, v in traces.items()}


def _rel_error(sigma, truth, setup):
    return setup.norm(sigma - truth) / setup.norm(truth)


def reconstruct_sigma(
    setup: ExperimentSetup,
    observed,
    a,
    g=None,
    sigma_init=0.0,
    iterations=200,
    sigma_true=None,
    M=None,
    penalty=0.0,
    noise_level=0.0,
    velocity_dependent=False,
    gtol=1e-10,
    max_backtracks=40,
    strict=False,
):
    """Projected gradient descent on J(sigma) = 1/2 ||d_t trace(sigma) - d_t observed||^2.

    Trial steps use the Barzilai-Borwein length; Armijo backtracking keeps J
    monotone.  Iterates are projected onto [0, M].
    """
    nv, shape = setup.quadrature.nv, setup.grid.shape
    pshape = ((nv,) if velocity_dependent else ()) + shape
    M = setup.M if M is None else M
    upper = np.inf if M is None else M
    sigma = np.clip(np.broadcast_to(np.asarray(sigma_init, float), pshape).copy(), 0.0, upper)
    ref = sigma.copy()

    def evaluate(sig):
        prob = setup.problem(sig if not velocity_dependent else sig, a=a, g=g)
        traj = solve_forward(prob)
        mis = trace_misfit(traj, observed)
        J = misfit_functional(traj, mis) + 0.5 * penalty * float(np.sum((sig - ref) ** 2))
        return J, prob, traj, mis

    def gradient(prob, traj, mis, sig):
        lam = solve_adjoint(prob, traj, mis)
        return sigma_gradient(prob, traj, lam, velocity_dependent) + penalty * (sig - ref)

    J, prob, traj, mis = evaluate(sigma)
    grad = gradient(prob, traj, mis, sigma)
    run = ReconstructionRun([sigma.copy()], [J], [], [], noise_level)
    if sigma_true is not None:
        run.errors.append(_rel_error(sigma, sigma_true, setup))
    g0 = float(np.linalg.norm(grad))
    if g0 == 0.0:
        run.status = "stationary"
        return run
    alpha = 0.1 * (1.0 if M is None else M) / float(np.max(np.abs(grad)))
    prev = None
    for _ in range(iterations):
        if prev is not None:
            ds, dg = sigma - prev[0], grad - prev[1]
            sy = float(np.sum(ds * dg))
            if sy > 0:
                alpha = float(np.sum(ds * ds)) / sy
        accepted = False
        for _ in range(max_backtracks):
            trial = np.clip(sigma - alpha * grad, 0.0, upper)
            step = trial - sigma
            J_t, prob_t, traj_t, mis_t = evaluate(trial)
            if J_t <= J + 1e-4 * float(np.sum(grad * step)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            run.status = "line-search-stalled"
            if strict:
                raise LineSearchStalled("no sufficient decrease along the projected gradient", run)
            warnings.warn("line search stalled; returning best iterate", RuntimeWarning, stacklevel=2)
            break
        prev = (sigma, grad)
        sigma, J = trial, J_t
        grad = gradient(prob_t, traj_t, mis_t, sigma)
        run.sigmas.append(sigma.copy())
        run.J.append(J)
        run.steps.append(alpha)
        if sigma_true is not None:
            run.errors.append(_rel_error(sigma, sigma_true, setup))
        pg = np.clip(sigma - grad, 0.0, upper) - sigma
        if float(np.linalg.norm(pg)) <= gtol * g0:
            run.status = "converged"
            break
    return run
