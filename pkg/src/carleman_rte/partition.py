"""Annular velocity domain, its spherical-coordinate partition and the
time/weight admissibility thresholds that depend on it.

Angles follow the usual convention: in 2D ``v = r (cos t, sin t)``; in 3D
``v = r (sin p cos t, sin p sin t, cos p)`` with azimuth ``t in [0, 2pi)``
and polar angle ``p in [0, pi]``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DeltaTooLarge, NonPositiveKappa, TimeTooShort

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class VelocityDomain:
    dim: int
    v0: float
    v1: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not 0.0 < self.v0 < self.v1:
            raise ValueError(f"need 0 < v0 < v1, got v0={self.v0}, v1={self.v1}")

    @property
    def measure(self) -> float:
        if self.dim == 2:
            return math.pi * (self.v1**2 - self.v0**2)
        return 4.0 / 3.0 * math.pi * (self.v1**3 - self.v0**3)


@dataclass(frozen=True)
class SpatialBox:
    """Axis-aligned box; ``lower == upper`` on every axis gives a point."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        if len(lo) != len(hi):
            raise ValueError("lower/upper length mismatch")
        if any(b < a for a, b in zip(lo, hi)):
            raise ValueError(f"box upper {hi} below lower {lo}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim):
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self):
        return len(self.lower)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))


def to_spherical(v):
    """Return ``(r, theta)`` in 2D or ``(r, theta, phi)`` in 3D."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = np.mod(np.arctan2(v[..., 1], v[..., 0]), TWO_PI)
    if v.shape[-1] == 2:
        return r, theta
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arccos(np.clip(v[..., 2] / np.where(r > 0, r, 1.0), -1.0, 1.0))
    return r, theta, phi


def from_spherical(r, theta, phi=None):
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if phi is None:
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    phi = np.asarray(phi, dtype=float)
    return np.stack(
        [r * np.sin(phi) * np.cos(theta), r * np.sin(phi) * np.sin(theta), r * np.cos(phi)],
        axis=-1,
    )


@dataclass(frozen=True)
class VelocityCell:
    index: int
    l: tuple  # 1-based (l0, l1, ...)
    theta: tuple
    phi: tuple | None
    radius: tuple

    @property
    def angular_midpoint(self):
        mid_t = 0.5 * (self.theta[0] + self.theta[1])
        if self.phi is None:
            return (mid_t,)
        return (mid_t, 0.5 * (self.phi[0] + self.phi[1]))

    def contains(self, v) -> np.ndarray:
        """Membership with the half-open angular convention and open radii.

        The polar angle ``pi`` itself is assigned to the last polar band so
        that the south pole is covered.
        """
        sph = to_spherical(v)
        r, theta = sph[0], sph[1]
        inside = (r > self.radius[0]) & (r < self.radius[1])
        inside &= (theta >= self.theta[0]) & (theta < self.theta[1])
        if self.phi is not None:
            phi = sph[2]
            upper_ok = phi < self.phi[1]
            if math.isclose(self.phi[1], math.pi):
                upper_ok |= phi >= self.phi[1]
            inside &= (phi >= self.phi[0]) & upper_ok
        return inside


@dataclass(frozen=True)
class VelocityPartition:
    domain: VelocityDomain
    counts: tuple
    cells: tuple
    gammas: np.ndarray | None = field(default=None, compare=False)
    kappas: np.ndarray | None = field(default=None, compare=False)

    @property
    def m(self) -> int:
        return len(self.cells)

    @property
    def kappa_min(self) -> float:
        if self.kappas is None:
            raise ValueError("kappas not certified yet")
        return float(np.min(self.kappas))

    def cell_of(self, v) -> np.ndarray:
        """Cell index of each velocity, -1 outside the annulus."""
        v = np.asarray(v, dtype=float)
        sph = to_spherical(v)
        r, theta = sph[0], sph[1]
        L0 = self.counts[0]
        l0 = np.minimum((theta * L0 / TWO_PI).astype(int), L0 - 1)
        j = l0
        if self.domain.dim == 3:
            L1 = self.counts[1]
            l1 = np.minimum((sph[2] * L1 / math.pi).astype(int), L1 - 1)
            j = l0 + l1 * L0
        inside = (r > self.domain.v0) & (r < self.domain.v1)
        return np.where(inside, j, -1)


def cell_index(l, counts) -> int:
    """Zero-based index of the cell with 1-based labels ``l``."""
    j, stride = 0, 1
    for li, Li in zip(l, counts):
        j += (li - 1) * stride
        stride *= Li
    return j


def build_partition(domain: VelocityDomain, counts) -> VelocityPartition:
    counts = tuple(int(c) for c in counts)
    if len(counts) != domain.dim - 1:
        raise ValueError(f"dim={domain.dim} needs {domain.dim - 1} counts, got {len(counts)}")
    if any(c < 1 for c in counts):
        raise ValueError(f"partition counts must be >= 1, got {counts}")
    cells = []
    # l0 varies fastest so that list position equals the cell index
    for labels in itertools.product(*(range(1, c + 1) for c in reversed(counts))):
        l = tuple(reversed(labels))
        L0 = counts[0]
        theta = (TWO_PI * (l[0] - 1) / L0, TWO_PI * l[0] / L0)
        phi = None
        if domain.dim == 3:
            L1 = counts[1]
            phi = (math.pi * (l[1] - 1) / L1, math.pi * l[1] / L1)
        cells.append(VelocityCell(cell_index(l, counts), l, theta, phi, (domain.v0, domain.v1)))
    assert [c.index for c in cells] == list(range(len(cells)))
    return VelocityPartition(domain, counts, tuple(cells))


def select_gammas(partition: VelocityPartition, rule="centroid-direction") -> VelocityPartition:
    if rule != "centroid-direction":
        raise ValueError(f"unknown gamma rule {rule!r}")
    r_mid = 0.5 * (partition.domain.v0 + partition.domain.v1)
    gammas = np.array([from_spherical(r_mid, *cell.angular_midpoint) for cell in partition.cells])
    return replace(partition, gammas=gammas, kappas=None)


def _cell_min(cell, gamma, n):
    """Lower bound for min of gamma.v over the closed cell.

    The functional is linear in r, so only r = v0, v1 matter.  On the unit
    sphere its only interior critical points are +-gamma_hat, hence the
    minimum over an angular patch sits on the patch edges unless
    -gamma_hat lies in the patch.  Edges are sampled with step h and the
    sampled minimum is lowered by the interpolation bound |gamma| r h^2 / 8.
    """
    g = np.linalg.norm(gamma)
    r_lo, r_hi = cell.radius
    ta, tb = cell.theta
    ts = np.linspace(ta, tb, n)
    h = (tb - ta) / (n - 1)
    if cell.phi is None:
        dirs = from_spherical(1.0, ts)
    else:
        pa, pb = cell.phi
        ps = np.linspace(pa, pb, n)
        h = max(h, (pb - pa) / (n - 1))
        k = max(int(math.sqrt(n)), 2)
        ti, pi_ = np.meshgrid(np.linspace(ta, tb, k), np.linspace(pa, pb, k))
        dirs = np.concatenate(
            [
                from_spherical(1.0, ts, np.full(n, pa)),
                from_spherical(1.0, ts, np.full(n, pb)),
                from_spherical(1.0, np.full(n, ta), ps),
                from_spherical(1.0, np.full(n, tb), ps),
                from_spherical(1.0, ti.ravel(), pi_.ravel()),
            ]
        )
    vals = dirs @ gamma
    m_ang = float(vals.min()) - g * h * h / 8.0
    if cell.phi is not None:
        # antipode of gamma inside the patch: global minimum on the sphere
        t_anti, p_anti = to_spherical(-gamma)[1:]
        t_in = ta <= t_anti <= tb
        p_in = cell.phi[0] <= p_anti <= cell.phi[1]
        if p_anti in (0.0, math.pi):
            t_in = True
        if t_in and p_in:
            m_ang = -g
    return min(r_lo * m_ang, r_hi * m_ang)


def certify_kappa(partition: VelocityPartition, samples_per_cell=10_000) -> VelocityPartition:
    if partition.gammas is None:
        raise ValueError("select_gammas must run before certify_kappa")
    kappas = np.array(
        [_cell_min(c, g, samples_per_cell) for c, g in zip(partition.cells, partition.gammas)]
    )
    for j, k in enumerate(kappas):
        if k <= 0.0:
            raise NonPositiveKappa(j, k)
    return replace(partition, kappas=kappas)


def make_partition(dim, v0, v1, counts, samples_per_cell=10_000) -> VelocityPartition:
    """build -> select_gammas -> certify_kappa in one call."""
    part = build_partition(VelocityDomain(dim, v0, v1), counts)
    return certify_kappa(select_gammas(part), samples_per_cell)


def gamma_extrema(omega: SpatialBox, partition: VelocityPartition):
    """``(r_max, r_min)``: extreme values of gamma_j.x over all cells and the box."""
    vals = omega.corners() @ partition.gammas.T
    return float(vals.max()), float(vals.min())


def minimal_time(omega: SpatialBox, partition: VelocityPartition) -> float:
    r_max, r_min = gamma_extrema(omega, partition)
    return (r_max - r_min) / partition.kappa_min


@dataclass(frozen=True)
class TimeGeometry:
    T: float
    T_min: float
    r_max: float
    r_min: float
    kappa_min: float
    beta: float
    r0: float
    r1: float
    delta: float


def _phi_samples(omega, partition, ts):
    axes = [np.linspace(a, b, 5) for a, b in zip(omega.lower, omega.upper)]
    xs = np.array(list(itertools.product(*axes)))
    xs = np.concatenate([xs, omega.corners()])
    gx = xs @ partition.gammas.T  # (npts, m)
    return gx[None, :, :], np.asarray(ts)[:, None, None]


def admissible_time_geometry(omega, partition, T, time_step=None) -> TimeGeometry:
    """Pick beta, r0, r1 and delta for horizon T.

    beta is the midpoint of ((r_max - r_min)/T, kappa_min); r0 and r1 sit at
    the 1/3 and 2/3 points of (r_max - beta T, r_min); delta is the largest
    multiple of ``time_step`` (default T/1000) satisfying the strict
    inequalities, then re-checked on sampled (x, t).
    """
    T = float(T)
    T_min = minimal_time(omega, partition)
    if T <= T_min:
        raise TimeTooShort(T, T_min)
    r_max, r_min = gamma_extrema(omega, partition)
    kmin = partition.kappa_min
    beta = 0.5 * ((r_max - r_min) / T + kmin)
    lo = r_max - beta * T
    r0 = lo + (r_min - lo) / 3.0
    r1 = lo + 2.0 * (r_min - lo) / 3.0
    dt = T / 1000.0 if time_step is None else float(time_step)
    # phi > r1 on [0, delta]  <=>  r_min - beta delta > r1
    # phi < r0 on [T-2delta, T]  <=>  r_max - beta (T - 2 delta) < r0
    bound = min((r_min - r1) / beta, (r0 - r_max + beta * T) / (2.0 * beta), T / 2.0)
    n = math.ceil(bound / dt) - 1
    delta = n * dt
    if n < 1:
        raise DeltaTooLarge(f"no grid-aligned delta below {bound:.6g} with time step {dt:.6g}")
    geom = TimeGeometry(T, T_min, r_max, r_min, kmin, beta, r0, r1, delta)
    check_time_geometry(omega, partition, geom)
    return geom


def check_time_geometry(omega, partition, geom: TimeGeometry, nt=64):
    gx, _ = _phi_samples(omega, partition, [0.0])
    early = np.linspace(0.0, geom.delta, nt)
    late = np.linspace(geom.T - 2 * geom.delta, geom.T, nt)
    phi_early = gx - geom.beta * early[:, None, None]
    phi_late = gx - geom.beta * late[:, None, None]
    ok = (
        0.0 < geom.beta < geom.kappa_min
        and geom.r_min <= geom.r_max
        and geom.r_max - geom.beta * geom.T < geom.r0 < geom.r1 < geom.r_min
        and geom.delta > 0.0
        and bool(np.all(phi_early > geom.r1))
        and bool(np.all(phi_late < geom.r0))
    )
    if not ok:
        raise AssertionError(f"time geometry invariants failed: {geom}")
    return True


def rotation_map(partition: VelocityPartition, j: int, v) -> np.ndarray:
    """Map velocities of cell 0 onto cell j by shifting the spherical angles."""
    v = np.asarray(v, dtype=float)
    if not np.all(partition.cells[0].contains(v)):
        raise ValueError("rotation_map expects velocities inside cell 0")
    if j == 0:
        return v.copy()
    cell = partition.cells[j]
    sph = to_spherical(v)
    theta = sph[1] + cell.theta[0]
    if partition.domain.dim == 2:
        return from_spherical(sph[0], theta)
    return from_spherical(sph[0], theta, sph[2] + cell.phi[0])
