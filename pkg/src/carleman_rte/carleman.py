"""Weights, cut-off and numerical evaluation of the Carleman and energy
inequalities on discrete trajectories.

All exponentially weighted sums are accumulated as logarithms.  The weight
factorises as ``exp(2 s gamma_c.x) * exp(-2 s beta t)``, so per cell ``c``
the spatial factor is tabulated once per ``s`` relative to its maximum and
the time factor is folded in with ``logaddexp``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DeltaTooLarge, FieldNotVanishingAtT, InadmissibleBeta
from .transport import (
    Trajectory,
    TransportProblem,
    gradient_norm,
    inflow_weights,
    l2_norm,
    operator_apply,
    outflow_weights,
    transport_apply,
)

# above this exponent spread the factorised tables could underflow
_MAX_SPREAD = 600.0


@dataclass(frozen=True)
class WeightFunction:
    gamma: np.ndarray
    beta: float

    def __call__(self, x, t):
        return np.asarray(x) @ self.gamma - self.beta * np.asarray(t)

    def rate(self, v):
        """``(d_t + v.grad) phi = -beta + v.gamma``."""
        return -self.beta + np.asarray(v) @ self.gamma


def weight_function(partition, j, beta) -> WeightFunction:
    if not 0.0 < beta < partition.kappa_min:
        raise InadmissibleBeta(f"beta={beta:.6g} outside (0, kappa_min={partition.kappa_min:.6g})")
    return WeightFunction(np.asarray(partition.gammas[j]), float(beta))


def weight_eval(partition, j, x, t, beta):
    return weight_function(partition, j, beta)(x, t)


def transport_rate(partition, j, v, beta):
    return weight_function(partition, j, beta).rate(v)


@dataclass(frozen=True)
class CutOff:
    """Quintic smoothstep from 1 (t <= T - 2 delta) down to 0 (t >= T - delta)."""

    T: float
    delta: float

    def _s(self, t):
        return np.clip((np.asarray(t, dtype=float) - (self.T - 2 * self.delta)) / self.delta, 0.0, 1.0)

    def __call__(self, t):
        s = self._s(t)
        return np.clip(1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s), 0.0, 1.0)

    def derivative(self, t):
        s = self._s(t)
        return -30.0 * s * s * (1.0 - s) ** 2 / self.delta

    @property
    def derivative_bound(self):
        return 15.0 / (8.0 * self.delta)


def build_cutoff(T, delta) -> CutOff:
    if not 0.0 < 2.0 * delta < T:
        raise DeltaTooLarge(f"need 0 < 2 delta < T, got delta={delta}, T={T}")
    return CutOff(float(T), float(delta))


def _levelwise_dt(x, dt):
    d = np.empty_like(x)
    d[:-1] = np.diff(x, axis=0) / dt
    d[-1] = d[-2]
    return d


def cutoff_time_derivative(traj: Trajectory, cutoff: CutOff):
    """``z = chi * d_t u`` and its inflow ghosts.

    ``d_t u`` at level n is the forward difference, which at n = 0 is exactly
    the scheme's right-hand side; the last level uses the backward difference.
    """
    chi = cutoff(traj.t)
    shape_u = (-1,) + (1,) * (traj.u.ndim - 1)
    shape_g = (-1,) + (1,) * traj.grid.dim
    z = chi.reshape(shape_u) * _levelwise_dt(traj.u, traj.dt)
    ghosts = {s: chi.reshape(shape_g) * _levelwise_dt(g, traj.dt) for s, g in traj.inflow.items()}
    return z, ghosts


@dataclass(frozen=True)
class CarlemanReport:
    s: float
    log_lhs_init: float
    log_lhs_bulk: float
    log_rhs_interior: float
    log_rhs_boundary: float
    C_req: float

    @property
    def lhs_init(self):
        return math.exp(self.log_lhs_init)

    @property
    def lhs_bulk(self):
        return math.exp(self.log_lhs_bulk)

    @property
    def rhs_interior(self):
        return math.exp(self.log_rhs_interior)

    @property
    def rhs_boundary(self):
        return math.exp(self.log_rhs_boundary)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


class _LogAccumulator:
    """Accumulates ``sum_n sum_x data_n(c, x) exp(s E_c(x) - 2 s beta t_n)`` per (s, c)."""

    def __init__(self, s_values, E, beta):
        # E: (m, npts) spatial exponents 2 gamma_c.x
        self.s = np.asarray(s_values, dtype=float)
        self.E = E
        self.beta = beta
        self.Emax = E.max(axis=1)  # (m,)
        spread = self.s[:, None] * (self.Emax - E.min(axis=1))[None, :]
        self.safe = bool(np.all(spread < _MAX_SPREAD))
        if self.safe:
            self.table = np.exp(self.s[:, None, None] * (E - self.Emax[:, None])[None])
        self.acc = np.full((len(self.s), E.shape[0]), -np.inf)

    def add(self, data, t):
        """``data``: (m, npts) nonnegative."""
        if self.safe:
            part = _log(np.einsum("cx,scx->sc", data, self.table))
        else:
            part = logsumexp(
                self.s[:, None, None] * (self.E - self.Emax[:, None])[None],
                b=np.broadcast_to(data, (len(self.s),) + data.shape),
                axis=2,
            )
        part = part - 2.0 * self.s[:, None] * self.beta * t
        self.acc = np.logaddexp(self.acc, part)

    def result(self):
        return logsumexp(self.acc + self.s[:, None] * self.Emax[None, :], axis=1)


def _group_by_cell(x, quad):
    """Sum ``(nv, ...)`` over the nodes of each cell -> ``(m, prod(...))``."""
    x = x.reshape(quad.nv, -1)
    out = np.zeros((quad.m, x.shape[1]))
    np.add.at(out, quad.cell, x)
    return out


def carleman_scan(problem: TransportProblem, partition, beta, z, z_inflow=None, s_values=(1.0,)):
    """Both sides of the Carleman inequality for every ``s`` in ``s_values``.

    ``z`` has shape ``(nt+1, nv, *grid)`` and must vanish at t = T.  The
    operator applied to z is the solver's residual stencil without source,
    with ``z_inflow`` (side -> (nt+1, nv, *face)) as ghost values.
    """
    grid, quad, dt, nt = problem.grid, problem.quadrature, problem.dt, problem.nt
    z = np.asarray(z, dtype=float)
    if z.shape != (nt + 1, quad.nv) + grid.shape:
        raise ValueError(f"field shape {z.shape} does not match the problem")
    total = float(np.sqrt(np.sum(z * z)))
    if total > 0 and float(np.sqrt(np.sum(z[-1] ** 2))) > 1e-12 * total:
        raise FieldNotVanishingAtT("field does not vanish at t=T; apply the cut-off first")
    if not 0.0 < beta < partition.kappa_min:
        raise InadmissibleBeta(f"beta={beta:.6g} outside (0, kappa_min={partition.kappa_min:.6g})")
    s_values = np.asarray(s_values, dtype=float)
    gam = np.asarray(partition.gammas)
    w = quad.weights.reshape((-1,) + (1,) * grid.dim)
    vol = grid.cell_volume

    centers = grid.centers().reshape(-1, grid.dim)
    bulk_E = 2.0 * gam @ centers.T
    init = _LogAccumulator(s_values, bulk_E, beta)
    bulk = _LogAccumulator(s_values, bulk_E, beta)
    interior = _LogAccumulator(s_values, bulk_E, beta)
    Wout = outflow_weights(grid, quad, dt)
    bnd = {}
    for side in grid.sides:
        xf = grid.face_centers(side).reshape(-1, grid.dim)
        bnd[side] = _LogAccumulator(s_values, 2.0 * gam @ xf.T, beta)

    init.add(_group_by_cell(w * vol * z[0] ** 2, quad), 0.0)
    for n in range(nt):
        tn = n * dt
        ghosts = None if z_inflow is None else {s: z_inflow[s][n] for s in z_inflow}
        Pz = (z[n + 1] - z[n]) / dt + operator_apply(problem, z[n], ghosts)
        bulk.add(_group_by_cell(w * vol * dt * z[n] ** 2, quad), tn)
        interior.add(_group_by_cell(w * vol * dt * Pz**2, quad), tn)
        for side in grid.sides:
            tr = z[n][grid.boundary_slice(side)]
            bnd[side].add(_group_by_cell(Wout[side] * tr**2, quad), tn)

    log_s = _log(s_values)
    L_init = log_s + init.result()
    L_bulk = 2.0 * log_s + bulk.result()
    L_int = interior.result()
    L_bnd = log_s + logsumexp(np.stack([b.result() for b in bnd.values()]), axis=0)

    reports = []
    for i, s in enumerate(s_values):
        if np.isneginf(L_int[i]):
            num = np.exp(L_init[i]) + np.exp(L_bulk[i]) - np.exp(L_bnd[i])
            c = 0.0 if num <= 0 else math.inf
        else:
            num = (
                np.exp(L_init[i] - L_int[i])
                + np.exp(L_bulk[i] - L_int[i])
                - np.exp(L_bnd[i] - L_int[i])
            )
            c = max(0.0, float(num))
        reports.append(
            CarlemanReport(float(s), float(L_init[i]), float(L_bulk[i]), float(L_int[i]), float(L_bnd[i]), c)
        )
    return reports


def carleman_sides(problem, partition, beta, z, z_inflow=None, s=1.0) -> CarlemanReport:
    return carleman_scan(problem, partition, beta, z, z_inflow, [s])[0]


@dataclass(frozen=True)
class ScanSummary:
    sup_C: float
    s_at_sup: float
    knee: float
    edge_attained: bool


def summarize_scan(reports) -> ScanSummary:
    """Supremum of C_req over the window, where it occurs, and the knee s0.

    The knee is the smallest scanned s beyond which C_req never increases.
    """
    s = np.array([r.s for r in reports])
    c = np.array([r.C_req for r in reports])
    k = int(np.argmax(c))
    knee_idx = len(c) - 1
    while knee_idx > 0 and c[knee_idx - 1] >= c[knee_idx]:
        knee_idx -= 1
    return ScanSummary(float(c[k]), float(s[k]), float(s[knee_idx]), k == len(c) - 1)


# -- energy estimates -------------------------------------------------------
@dataclass
class EnergyReport:
    t: np.ndarray
    E: np.ndarray  # E(t_n) = ||d_t u(t_n)||^2
    cum_outflow: np.ndarray  # int_0^{t_n} over Gamma_+
    cum_inflow: np.ndarray  # int_0^{t_n} over Gamma_-
    data_terms: float  # ||f||^2 + ||a||^2 + ||grad a||^2
    lhs_1: float  # max_t E(t)
    rhs_1: float  # data_terms + total inflow term, multiplied by C_E
    lhs_2: float  # total outflow term
    rhs_2: float  # total inflow term + data_terms

    @property
    def constant_1(self):
        """Smallest constant making the first inequality hold for this run."""
        if self.rhs_1 == 0.0:
            return 0.0 if self.lhs_1 == 0.0 else math.inf
        return self.lhs_1 / self.rhs_1

    @property
    def slack_2(self):
        return self.rhs_2 - self.lhs_2


def energy_check(problem: TransportProblem, traj: Trajectory, f=None, a=None) -> EnergyReport:
    """Evaluate both energy inequalities on one trajectory.

    ``f`` and ``a`` default to the problem's source factor and initial data.
    """
    grid, quad, dt = traj.grid, traj.quadrature, traj.dt
    f = problem.f_field if f is None else f
    a = traj.u[0] if a is None else a
    w = quad.weights.reshape((-1,) + (1,) * grid.dim)
    du = _levelwise_dt(traj.u, dt)
    E = np.sum(du**2 * w, axis=tuple(range(1, du.ndim))) * grid.cell_volume
    Wout = outflow_weights(grid, quad, dt)
    Win = inflow_weights(grid, quad, dt)
    out_n = np.zeros(traj.nt)
    in_n = np.zeros(traj.nt)
    for s in grid.sides:
        sum_axes = tuple(range(1, 1 + grid.dim))
        out_n += np.sum(Wout[s] * traj.dt_trace(s) ** 2, axis=sum_axes)
        in_n += np.sum(Win[s] * traj.dt_inflow(s) ** 2, axis=sum_axes)
    cum_out = np.concatenate([[0.0], np.cumsum(out_n)])
    cum_in = np.concatenate([[0.0], np.cumsum(in_n)])
    data = (0.0 if f is None else l2_norm(f, grid, quad) ** 2) + l2_norm(a, grid, quad) ** 2
    data += gradient_norm(a, grid, quad) ** 2
    return EnergyReport(
        t=traj.t,
        E=E,
        cum_outflow=cum_out,
        cum_inflow=cum_in,
        data_terms=data,
        lhs_1=float(E.max()),
        rhs_1=data + float(cum_in[-1]),
        lhs_2=float(cum_out[-1]),
        rhs_2=float(cum_in[-1]) + data,
    )


def fit_energy_constant(reports) -> float:
    return max(r.constant_1 for r in reports)


def energy_balance(problem: TransportProblem, traj: Trajectory):
    """Exact discrete energy budget of the upwind step for sigma = k = F = 0.

    With ``<u, T_g u> = (Out - In + Jumps) / 2`` the explicit step gives

        E^{n+1} - E^n = -dt (Out^n - In^n + Jumps^n) + dt^2 ||T_g u^n||^2,

    where E is the squared L2(Omega x V) norm of the field, Out/In are the
    (v.nu)-weighted boundary fluxes of the squared trace/ghost, and Jumps
    the upwind numerical dissipation.  Returns a dict of per-step arrays.
    """
    grid, quad, dt = traj.grid, traj.quadrature, traj.dt
    w = quad.weights.reshape((-1,) + (1,) * grid.dim)
    vol = grid.cell_volume
    v = quad.nodes
    E = np.array([np.sum(w * un**2) * vol for un in traj.u])
    Wout = outflow_weights(grid, quad, 1.0)
    Win = inflow_weights(grid, quad, 1.0)
    nt = traj.nt
    out, inn, jumps, sq = (np.zeros(nt) for _ in range(4))
    for n in range(nt):
        un = traj.u[n]
        ghosts = {s: traj.inflow[s][n] for s in grid.sides}
        for s in grid.sides:
            out[n] += np.sum(Wout[s] * un[grid.boundary_slice(s)] ** 2)
            inn[n] += np.sum(Win[s] * ghosts[s] ** 2)
        for d in range(grid.dim):
            ax = 1 + d
            lo = np.expand_dims(ghosts[(d, -1)], ax)
            hi = np.expand_dims(ghosts[(d, 1)], ax)
            back = np.diff(un, axis=ax, prepend=lo)
            fwd = np.diff(un, axis=ax, append=hi)
            vp = np.maximum(v[:, d], 0.0).reshape(w.shape)
            vm = np.maximum(-v[:, d], 0.0).reshape(w.shape)
            jumps[n] += np.sum(w * (vp * back**2 + vm * fwd**2)) * grid.face_area(d)
        Tu = transport_apply(un, quad, grid, ghosts)
        sq[n] = np.sum(w * Tu**2) * vol
    predicted = -dt * (out - inn + jumps) + dt * dt * sq
    return {
        "E": E,
        "outflow": out,
        "inflow": inn,
        "jumps": jumps,
        "dt2_sq": dt * dt * sq,
        "increment": np.diff(E),
        "predicted": predicted,
    }

