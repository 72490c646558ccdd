"""Explicit first-order upwind solver for the time-dependent transport
equation on an axis-aligned box, plus its exact discrete adjoint.

Layout conventions
------------------
* a velocity field at one time level has shape ``(nv, *grid.shape)``;
* a trajectory stacks ``nt + 1`` of those along a leading time axis;
* boundary quantities live on *sides* ``(axis, sign)`` with outward normal
  ``sign * e_axis`` and have shape ``(nv, *grid.face_shape(axis))``.

One time step reads

    u^{n+1} = u^n - dt (T_g u^n + sigma u^n - K u^n - F^n)

where ``T_g`` is the upwind transport operator with the inflow data ``g``
supplied as ghost values on the inflow faces.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolated, CflViolation, NonFiniteState, PositivityViolated
from .partition import SpatialBox, VelocityPartition, from_spherical, rotation_map, to_spherical


class CompatibilityWarning(UserWarning):
    """Initial data and inflow data disagree on the inflow boundary at t=0."""


@dataclass(frozen=True)
class SpatialGrid:
    box: SpatialBox
    cells: tuple

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != self.box.dim or any(c < 1 for c in cells):
            raise ValueError(f"bad cell counts {self.cells} for a {self.box.dim}D box")
        if any(b <= a for a, b in zip(self.box.lower, self.box.upper)):
            raise ValueError("grid box must have positive extent on every axis")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def uniform(cls, dim, n, box=None):
        return cls(box or SpatialBox.unit(dim), (n,) * dim)

    @property
    def dim(self):
        return len(self.cells)

    @property
    def shape(self):
        return self.cells

    @property
    def h(self):
        return tuple((b - a) / n for a, b, n in zip(self.box.lower, self.box.upper, self.cells))

    @property
    def cell_volume(self):
        return math.prod(self.h)

    def face_area(self, axis):
        return math.prod(h for d, h in enumerate(self.h) if d != axis)

    def axis_centers(self, d):
        a, h = self.box.lower[d], self.h[d]
        return a + h * (np.arange(self.cells[d]) + 0.5)

    def centers(self):
        """Cell centres, shape ``(*shape, dim)``."""
        mesh = np.meshgrid(*(self.axis_centers(d) for d in range(self.dim)), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def sides(self):
        return [(d, s) for d in range(self.dim) for s in (-1, 1)]

    def face_shape(self, axis):
        return tuple(n for d, n in enumerate(self.cells) if d != axis)

    def face_centers(self, side):
        """Centres of the boundary faces on ``side``, shape ``(*face_shape, dim)``."""
        axis, sign = side
        c = np.take(self.centers(), 0, axis=axis).copy()
        c[..., axis] = self.box.upper[axis] if sign > 0 else self.box.lower[axis]
        return c

    def normal(self, side):
        n = np.zeros(self.dim)
        n[side[0]] = side[1]
        return n

    def boundary_slice(self, side, field_ndim_lead=1):
        """Index selecting the cells adjacent to ``side`` (after ``field_ndim_lead`` leading axes)."""
        axis, sign = side
        idx = [slice(None)] * (field_ndim_lead + self.dim)
        idx[field_ndim_lead + axis] = -1 if sign > 0 else 0
        return tuple(idx)


def side_name(side):
    return f"x{side[0]}{'+' if side[1] > 0 else '-'}"


@dataclass(frozen=True)
class VelocityQuadrature:
    nodes: np.ndarray  # (nv, dim)
    weights: np.ndarray  # (nv,)
    cell: np.ndarray  # (nv,) partition cell of each node
    m: int

    @property
    def nv(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def cell_nodes(self, j):
        return np.flatnonzero(self.cell == j)

    def cell_measure(self, j):
        return float(self.weights[self.cell == j].sum())

    @classmethod
    def from_partition(cls, partition: VelocityPartition, n_radial=1, n_angular=2):
        """Midpoint nodes on a sub-grid of every cell, with exact sub-cell measures.

        Nodes of cell 0 are built on the spherical sub-grid and carried to
        cell j by the rotation map, so node ``p`` of every cell corresponds
        to the same point of cell 0.
        """
        dom = partition.domain
        na = (n_angular,) * (dom.dim - 1) if np.isscalar(n_angular) else tuple(n_angular)
        rb = np.linspace(dom.v0, dom.v1, n_radial + 1)
        c0 = partition.cells[0]
        tb = np.linspace(c0.theta[0], c0.theta[1], na[0] + 1)
        r_mid, t_mid = 0.5 * (rb[1:] + rb[:-1]), 0.5 * (tb[1:] + tb[:-1])
        if dom.dim == 2:
            R, Tt = np.meshgrid(r_mid, t_mid, indexing="ij")
            base = from_spherical(R.ravel(), Tt.ravel())
        else:
            pb = np.linspace(c0.phi[0], c0.phi[1], na[1] + 1)
            p_mid = 0.5 * (pb[1:] + pb[:-1])
            R, Tt, P = np.meshgrid(r_mid, t_mid, p_mid, indexing="ij")
            base = from_spherical(R.ravel(), Tt.ravel(), P.ravel())
        nodes, weights, cell = [], [], []
        for j, c in enumerate(partition.cells):
            vj = rotation_map(partition, j, base)
            nodes.append(vj)
            cell.append(np.full(len(vj), j))
            r_lo = np.repeat(rb[:-1], len(base) // n_radial)
            r_hi = np.repeat(rb[1:], len(base) // n_radial)
            dt_ = (c.theta[1] - c.theta[0]) / na[0]
            if dom.dim == 2:
                weights.append(0.5 * (r_hi**2 - r_lo**2) * dt_)
            else:
                dp = (c.phi[1] - c.phi[0]) / na[1]
                phi = to_spherical(vj)[2]
                sin_part = np.cos(phi - dp / 2) - np.cos(phi + dp / 2)
                weights.append((r_hi**3 - r_lo**3) / 3.0 * dt_ * sin_part)
        return cls(np.concatenate(nodes), np.concatenate(weights), np.concatenate(cell), partition.m)


def _as_field(x, nv, shape, name):
    """Broadcast a scalar / spatial / velocity-spatial array to ``(nv|1, *shape)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.full((1,) + shape, float(x))
    if x.shape == shape:
        return x[None]
    if x.shape in ((nv,) + shape, (1,) + shape):
        return x
    raise ValueError(f"{name} has shape {x.shape}; expected {shape} or {(nv,) + shape}")


@dataclass
class Coefficients:
    """Absorption ``sigma`` and scattering kernel ``kernel`` on the discrete grid.

    ``sigma`` is broadcast to ``(nv|1, *grid)``; ``kernel`` is ``(nv, nv)``
    (spatially constant) or ``(nv, nv, *grid)``, entry ``[p, q]`` being the
    rate from node q into node p.
    """

    sigma: np.ndarray
    kernel: np.ndarray | None = None
    M: float | None = None

    def bound(self):
        vals = [float(np.max(np.abs(self.sigma)))]
        if self.kernel is not None:
            vals.append(float(np.max(np.abs(self.kernel))))
        return max(vals)

    def validate(self):
        if np.any(self.sigma < 0) or (self.kernel is not None and np.any(self.kernel < 0)):
            raise BoundViolated("coefficients must be nonnegative")
        if self.M is not None and self.bound() > self.M:
            raise BoundViolated(f"coefficient bound {self.bound():.6g} exceeds M={self.M}")


@dataclass
class TransportProblem:
    """Forward problem data.

    ``g`` is None (zero inflow), a float, or a callable ``g(x, v, t)`` with
    ``x`` of shape ``(npts, dim)`` and ``v`` of shape ``(nv, dim)`` returning
    ``(nv, npts)``.  ``R`` is None (R = 1), an array with a leading time axis
    of length ``nt + 1``, or a callable ``R(t)`` returning a field.
    """

    grid: SpatialGrid
    quadrature: VelocityQuadrature
    coefficients: Coefficients
    T: float
    a: np.ndarray | float | None = None
    g: object = None
    f: np.ndarray | None = None
    R: object = None
    dt: float | None = None
    cfl: float = 0.9
    compat_tol: float = 0.05
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        nv, shape = self.quadrature.nv, self.grid.shape
        self.sigma = _as_field(self.coefficients.sigma, nv, shape, "sigma")
        k = self.coefficients.kernel
        if k is not None:
            k = np.asarray(k, dtype=float)
            if k.shape == (nv, nv):
                k = k.reshape((nv, nv) + (1,) * self.grid.dim)
            elif k.shape != (nv, nv) + shape:
                raise ValueError(f"kernel shape {k.shape} incompatible with nv={nv}, grid={shape}")
        self.kernel = k
        self.a_field = np.broadcast_to(
            _as_field(0.0 if self.a is None else self.a, nv, shape, "a"), (nv,) + shape
        ).copy()
        self.f_field = None if self.f is None else _as_field(self.f, nv, shape, "f")
        vmax = float(np.max(np.linalg.norm(self.quadrature.nodes, axis=1)))
        self.dt_cfl = 1.0 / (vmax * sum(1.0 / h for h in self.grid.h))
        if self.dt is None:
            self.nt = max(1, math.ceil(self.T / (self.cfl * self.dt_cfl)))
        else:
            self.nt = max(1, round(self.T / self.dt))
            if abs(self.nt * self.dt - self.T) > 1e-9 * max(1.0, self.T):
                raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")
        self.dt = self.T / self.nt
        if self.dt * vmax * sum(1.0 / h for h in self.grid.h) > 1.0 + 1e-12:
            raise CflViolation(
                f"dt={self.dt:.6g} exceeds the CFL limit {self.dt_cfl:.6g} for max|v|={vmax:.6g}"
            )

    @property
    def times(self):
        return self.dt * np.arange(self.nt + 1)

    @property
    def nv(self):
        return self.quadrature.nv

    # -- data evaluation -------------------------------------------------
    def inflow_ghosts(self):
        """Ghost values on every side for every time level: side -> (nt+1, nv, *face)."""
        if "ghosts" in self._cache:
            return self._cache["ghosts"]
        out = {}
        t = self.times
        for side in self.grid.sides:
            fshape = self.grid.face_shape(side[0])
            full = (self.nt + 1, self.nv) + fshape
            if self.g is None:
                out[side] = np.zeros(full)
            elif np.isscalar(self.g):
                out[side] = np.full(full, float(self.g))
            else:
                x = self.grid.face_centers(side).reshape(-1, self.grid.dim)
                vals = [np.asarray(self.g(x, self.quadrature.nodes, tn)) for tn in t]
                out[side] = np.stack(vals).reshape(full)
        self._cache["ghosts"] = out
        return out

    def R_at(self, n):
        R = self.R
        if R is None:
            return 1.0
        if callable(R):
            return _as_field(R(n * self.dt), self.nv, self.grid.shape, "R")
        return R[n]

    def source_at(self, n):
        if self.f_field is None:
            return None
        return self.f_field * self.R_at(n)

    # -- hypothesis checks -------------------------------------------------
    def check_positivity(self, a0):
        """Raise unless a >= a0 everywhere or R(., ., 0) > a0 everywhere."""
        if a0 <= 0:
            raise PositivityViolated(f"positivity floor a0 must be > 0, got {a0}")
        if np.all(self.a_field >= a0):
            return "initial"
        if np.all(np.asarray(self.R_at(0)) > a0):
            return "source"
        raise PositivityViolated(
            f"min a = {self.a_field.min():.6g} < a0 = {a0:.6g} and R(.,.,0) does not exceed a0"
        )

    def check_compatibility(self):
        """Warn when a differs from g(t=0) next to the inflow faces; return the mismatch."""
        ghosts = self.inflow_ghosts()
        worst = 0.0
        nodes = self.quadrature.nodes
        for side in self.grid.sides:
            inflow = (nodes @ self.grid.normal(side)) < 0
            if not inflow.any():
                continue
            adj = self.a_field[self.grid.boundary_slice(side)]
            worst = max(worst, float(np.max(np.abs(adj - ghosts[side][0])[inflow])))
        if worst > self.compat_tol * (1.0 + float(np.max(np.abs(self.a_field)))):
            warnings.warn(
                f"initial data and inflow differ by {worst:.3g} on the inflow boundary at t=0",
                CompatibilityWarning,
                stacklevel=2,
            )
        return worst


# -- discrete operators ---------------------------------------------------
def _velocity_parts(quad, dim):
    v = quad.nodes
    shp = (quad.nv,) + (1,) * dim
    vp = [np.maximum(v[:, d], 0.0).reshape(shp) for d in range(dim)]
    vm = [np.minimum(v[:, d], 0.0).reshape(shp) for d in range(dim)]
    return vp, vm


def transport_apply(u, quad, grid, ghosts=None):
    """Upwind ``v . grad u`` with ghost values on inflow faces (zero if omitted)."""
    vp, vm = _velocity_parts(quad, grid.dim)
    out = np.zeros_like(u)
    for d, h in enumerate(grid.h):
        ax = 1 + d
        lo = hi = None
        if ghosts is not None:
            lo, hi = ghosts.get((d, -1)), ghosts.get((d, 1))
        lo = np.zeros(np.take(u, [0], axis=ax).shape) if lo is None else np.expand_dims(lo, ax)
        hi = np.zeros(np.take(u, [0], axis=ax).shape) if hi is None else np.expand_dims(hi, ax)
        back = np.diff(u, axis=ax, prepend=lo)
        fwd = np.diff(u, axis=ax, append=hi)
        out += (vp[d] * back + vm[d] * fwd) / h
    return out


def transport_apply_transpose(lam, quad, grid):
    """Euclidean transpose of ``transport_apply`` with zero ghosts."""
    vp, vm = _velocity_parts(quad, grid.dim)
    out = np.zeros_like(lam)
    for d, h in enumerate(grid.h):
        ax = 1 + d
        zero = np.zeros(np.take(lam, [0], axis=ax).shape)
        fwd = np.diff(lam, axis=ax, append=zero)
        back = np.diff(lam, axis=ax, prepend=zero)
        out -= (vp[d] * fwd + vm[d] * back) / h
    return out


def _kernel_weighted(kernel, weights, dim):
    return kernel * weights.reshape((1, -1) + (1,) * dim)


def collision_apply(u, kernel, weights):
    """``(K u)[p] = sum_q kernel[p, q] w_q u[q]`` at every spatial point.

    ``kernel`` is ``(nv, nv)`` or ``(nv, nv, *grid)``; ``u`` is ``(nv, *grid)``.
    """
    if kernel is None:
        return np.zeros_like(u)
    dim = u.ndim - 1
    k = np.asarray(kernel, dtype=float)
    if k.ndim == 2:
        return np.tensordot(k * weights[None, :], u, axes=(1, 0))
    kw = _kernel_weighted(k, weights, dim)
    if all(s == 1 for s in k.shape[2:]):
        return np.tensordot(kw.reshape(k.shape[:2]), u, axes=(1, 0))
    return np.einsum("pq...,q...->p...", kw, u)


def collision_apply_blocked(u, kernel, weights, cell, m):
    """Same as ``collision_apply`` but summed cell by cell over the partition."""
    if kernel is None:
        return np.zeros_like(u)
    out = np.zeros_like(u)
    for j in range(m):
        q = np.flatnonzero(cell == j)
        out += collision_apply(u[q], np.asarray(kernel)[:, q], weights[q])
    return out


def collision_apply_transpose(lam, kernel, weights):
    if kernel is None:
        return np.zeros_like(lam)
    dim = lam.ndim - 1
    k = np.asarray(kernel, dtype=float)
    if k.ndim == 2:
        k = k.reshape(k.shape + (1,) * dim)
    kw = _kernel_weighted(k, weights, dim)
    if all(s == 1 for s in k.shape[2:]):
        return np.tensordot(kw.reshape(k.shape[:2]), lam, axes=(0, 0))
    return np.einsum("pq...,p...->q...", kw, lam)


def operator_apply(problem, u, ghosts=None):
    """``A u = T_g u + sigma u - K u`` at one time level."""
    return (
        transport_apply(u, problem.quadrature, problem.grid, ghosts)
        + problem.sigma * u
        - collision_apply(u, problem.kernel, problem.quadrature.weights)
    )


def step_transpose(problem, lam):
    """Transpose of the homogeneous one-step map ``u -> u - dt A u``."""
    q = problem.quadrature
    return lam - problem.dt * (
        transport_apply_transpose(lam, q, problem.grid)
        + problem.sigma * lam
        - collision_apply_transpose(lam, problem.kernel, q.weights)
    )


def step_apply(problem, u):
    return u - problem.dt * operator_apply(problem, u)


# -- trajectories --------------------------------------------------------
@dataclass
class Trajectory:
    grid: SpatialGrid
    quadrature: VelocityQuadrature
    t: np.ndarray  # (nt+1,)
    u: np.ndarray  # (nt+1, nv, *grid)
    inflow: dict  # side -> (nt+1, nv, *face) ghost values

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def nt(self):
        return len(self.t) - 1

    def trace(self, side):
        """States of the cells adjacent to ``side`` for every time level."""
        return self.u[self.grid.boundary_slice(side, field_ndim_lead=2)]

    def traces(self):
        return {s: self.trace(s) for s in self.grid.sides}

    def outflow_mask(self, side):
        return (self.quadrature.nodes @ self.grid.normal(side)) > 0

    def dt_trace(self, side):
        """Backward time differences of the adjacent states, ``(nt, nv, *face)``."""
        return np.diff(self.trace(side), axis=0) / self.dt

    def dt_inflow(self, side):
        return np.diff(self.inflow[side], axis=0) / self.dt

    def time_derivative(self):
        """Forward differences ``(u^{n+1} - u^n)/dt`` for n < nt, shape ``(nt, nv, *grid)``."""
        return np.diff(self.u, axis=0) / self.dt

    def __sub__(self, other):
        return Trajectory(
            self.grid,
            self.quadrature,
            self.t,
            self.u - other.u,
            {s: self.inflow[s] - other.inflow[s] for s in self.inflow},
        )

    def scaled(self, lam):
        return Trajectory(
            self.grid, self.quadrature, self.t, lam * self.u, {s: lam * v for s, v in self.inflow.items()}
        )


def solve_forward(problem: TransportProblem, check_every=1) -> Trajectory:
    ghosts = problem.inflow_ghosts()
    u = np.empty((problem.nt + 1, problem.nv) + problem.grid.shape)
    u[0] = problem.a_field
    dt = problem.dt
    for n in range(problem.nt):
        gn = {s: ghosts[s][n] for s in ghosts}
        rhs = operator_apply(problem, u[n], gn)
        F = problem.source_at(n)
        if F is not None:
            rhs = rhs - F
        u[n + 1] = u[n] - dt * rhs
        if (n + 1) % check_every == 0 and not np.all(np.isfinite(u[n + 1])):
            raise NonFiniteState(f"non-finite state at step {n + 1} (t={(n + 1) * dt:.6g})")
    return Trajectory(problem.grid, problem.quadrature, problem.times, u, ghosts)


def residual(problem: TransportProblem, u, inflow=None, with_source=True):
    """Scheme residual ``(u^{n+1}-u^n)/dt + A_g u^n - F^n`` for n = 0..nt-1."""
    expected = (problem.nt + 1, problem.nv) + problem.grid.shape
    u = np.asarray(u, dtype=float)
    if u.shape != expected:
        raise ValueError(f"field shape {u.shape} does not match {expected}")
    ghosts = problem.inflow_ghosts() if inflow is None else inflow
    out = np.empty((problem.nt,) + expected[1:])
    for n in range(problem.nt):
        out[n] = (u[n + 1] - u[n]) / problem.dt + operator_apply(
            problem, u[n], {s: ghosts[s][n] for s in ghosts}
        )
        F = problem.source_at(n) if with_source else None
        if F is not None:
            out[n] -= F
    return out


# -- norms and boundary data ---------------------------------------------
def l2_norm(field_, grid, quad):
    """L2(Omega x V) norm of a ``(nv|1, *grid)`` field."""
    f = np.broadcast_to(field_, (quad.nv,) + grid.shape)
    w = quad.weights.reshape((-1,) + (1,) * grid.dim)
    return float(np.sqrt(np.sum(w * f * f) * grid.cell_volume))


def gradient_norm(field_, grid, quad):
    f = np.broadcast_to(field_, (quad.nv,) + grid.shape)
    total = 0.0
    for d, h in enumerate(grid.h):
        if grid.cells[d] < 2:
            continue
        total += l2_norm(np.gradient(f, h, axis=1 + d), grid, quad) ** 2
    return math.sqrt(total)


def outflow_weights(grid, quad, dt):
    """Quadrature weight ``dt * w_q * (v.nu)_+ * dS`` per side, shape ``(nv, 1...)``."""
    out = {}
    for side in grid.sides:
        vn = np.maximum(quad.nodes @ grid.normal(side), 0.0)
        w = dt * quad.weights * vn * grid.face_area(side[0])
        out[side] = w.reshape((-1,) + (1,) * (grid.dim - 1))
    return out


def inflow_weights(grid, quad, dt):
    out = {}
    for side in grid.sides:
        vn = np.maximum(-(quad.nodes @ grid.normal(side)), 0.0)
        w = dt * quad.weights * vn * grid.face_area(side[0])
        out[side] = w.reshape((-1,) + (1,) * (grid.dim - 1))
    return out


def outflow_energy(traj: Trajectory):
    """``int_0^T int_{Gamma_+} (v.nu) |d_t u|^2``  (the square of d0)."""
    W = outflow_weights(traj.grid, traj.quadrature, traj.dt)
    return float(sum(np.sum(W[s] * traj.dt_trace(s) ** 2) for s in traj.grid.sides))


def inflow_energy(traj: Trajectory):
    """``int_0^T int_{Gamma_-} |v.nu| |d_t g|^2``."""
    W = inflow_weights(traj.grid, traj.quadrature, traj.dt)
    return float(sum(np.sum(W[s] * traj.dt_inflow(s) ** 2) for s in traj.grid.sides))


def outflow_data_norm(traj: Trajectory):
    """Return ``(d0, d)``.

    ``d0`` is the weighted L2 norm of the outflow time derivative;
    ``d = d0 + sum_i (||a_i|| + ||grad a_i||)`` with the initial state split
    by partition cell.
    """
    d0 = math.sqrt(outflow_energy(traj))
    quad, grid = traj.quadrature, traj.grid
    a = traj.u[0]
    extra = 0.0
    for j in range(quad.m):
        q = quad.cell_nodes(j)
        sub = VelocityQuadrature(quad.nodes[q], quad.weights[q], quad.cell[q], 1)
        extra += l2_norm(a[q], grid, sub) + gradient_norm(a[q], grid, sub)
    return d0, d0 + extra


# -- adjoint --------------------------------------------------------------
def trace_misfit(traj: Trajectory, observed):
    """``d_t(model trace) - d_t(observed trace)`` per side; observed is side -> (nt+1, nv, *face)."""
    return {s: traj.dt_trace(s) - np.diff(observed[s], axis=0) / traj.dt for s in traj.grid.sides}


def misfit_functional(traj: Trajectory, misfit):
    W = outflow_weights(traj.grid, traj.quadrature, traj.dt)
    return 0.5 * float(sum(np.sum(W[s] * misfit[s] ** 2) for s in misfit))


def solve_adjoint(problem: TransportProblem, traj: Trajectory, misfit):
    """Discrete adjoint of ``J = 1/2 sum W |d_t trace - data|^2`` on the outflow.

    ``misfit`` maps side -> ``(nt, nv, *face)`` residuals of the time-
    differenced traces.  Returns ``lam`` of shape ``(nt+1, nv, *grid)`` with
    ``lam[n] = dJ/du^n`` (total derivative through later steps).
    """
    grid, quad, nt, dt = problem.grid, problem.quadrature, problem.nt, problem.dt
    W = outflow_weights(grid, quad, dt)
    # dJ/dy^n = (r^n - r^{n+1}) / dt with r^n = W * misfit^n, r^0 = r^{nt+1} = 0
    inject = {}
    for s in grid.sides:
        r = np.zeros((nt + 2, quad.nv) + grid.face_shape(s[0]))
        r[1 : nt + 1] = W[s] * misfit[s]
        inject[s] = (r[:-1] - r[1:]) / dt
    lam = np.empty((nt + 1, quad.nv) + grid.shape)
    cur = np.zeros((quad.nv,) + grid.shape)
    for n in range(nt, -1, -1):
        if n < nt:
            cur = step_transpose(problem, cur)
        for s in grid.sides:
            cur[grid.boundary_slice(s)] += inject[s][n]
        if not np.all(np.isfinite(cur)):
            raise NonFiniteState(f"non-finite adjoint state at step {n}")
        lam[n] = cur
    return lam


def sigma_gradient(problem, traj: Trajectory, lam, velocity_dependent=False):
    """Gradient of J with respect to the grid values of sigma."""
    g = -problem.dt * np.einsum("n...,n...->...", lam[1:], traj.u[:-1])
    return g if velocity_dependent else g.sum(axis=0)
