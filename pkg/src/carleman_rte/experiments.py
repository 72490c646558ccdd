"""Config-driven experiment runners shared by the CLI and the scripts.

Each runner returns an ``Outcome``: tidy tables keyed by file name, a summary
dict for the manifest, and the partition/time-geometry block.  Nothing is
written to disk here.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .carleman import (
    build_cutoff,
    carleman_scan,
    cutoff_time_derivative,
    energy_check,
    fit_energy_constant,
    summarize_scan,
)
from .config import FieldRecipe, RunConfig
from .errors import DegenerateEnsemble, PositivityViolated, TimeTooShort
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
from .tables import emit_plot_tables, kappa_table, partition_summary, traces_table
from .transport import (
    Coefficients,
    SpatialGrid,
    TransportProblem,
    VelocityQuadrature,
    outflow_data_norm,
    solve_forward,
)


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)


@dataclass
class Context:
    """Geometry and discretization resolved from a config."""

    cfg: RunConfig
    partition: object
    box: SpatialBox
    grid: SpatialGrid
    quadrature: VelocityQuadrature
    T: float
    dt: float
    geometry: object

    @property
    def x(self):
        return self.grid.centers()

    def field(self, recipe: FieldRecipe):
        lo, hi = self.cfg.box
        return recipe.evaluate(self.x, lo, hi)

    @property
    def kernel(self):
        k = self.cfg.coefficients.kernel
        return None if k == 0 else np.full((self.quadrature.nv,) * 2, float(k))

    def R(self):
        c = self.cfg.coefficients
        if c.R_amplitude == 0:
            return None
        return lambda t: 1.0 + c.R_amplitude * math.sin(c.R_frequency * t)

    def setup(self) -> ExperimentSetup:
        d = self.cfg.discretization
        return ExperimentSetup(
            self.partition, self.grid, self.quadrature, self.T, self.kernel, d.dt, d.cfl, self.cfg.coefficients.M
        )


def resolve(cfg: RunConfig) -> Context:
    """Build partition, grid and quadrature; validate the horizon before any solve."""
    geo, disc = cfg.geometry, cfg.discretization
    partition = make_partition(geo.dim, geo.v0, geo.v1, geo.counts, geo.kappa_samples)
    lo, hi = cfg.box
    box = SpatialBox(tuple(lo), tuple(hi))
    T_min = minimal_time(box, partition)
    T = disc.T if disc.T is not None else disc.T_factor * T_min
    if T <= T_min:
        raise TimeTooShort(T, T_min)
    grid = SpatialGrid(box, (disc.cells,) * geo.dim)
    quad = VelocityQuadrature.from_partition(partition, disc.n_radial, disc.n_angular)
    probe = TransportProblem(grid, quad, Coefficients(0.0), T, dt=disc.dt, cfl=disc.cfl)
    geom = admissible_time_geometry(box, partition, T, probe.dt)
    return Context(cfg, partition, box, grid, quad, T, probe.dt, geom)


def _base(ctx) -> Outcome:
    return Outcome(
        tables={"kappa.csv": kappa_table(ctx.partition)},
        partition=partition_summary(ctx.partition, ctx.geometry),
    )


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def run_partition(cfg, threads=1) -> Outcome:
    return _base(resolve(cfg))


def _forward_problem(ctx):
    c = ctx.cfg.coefficients
    coeffs = Coefficients(ctx.field(c.sigma), ctx.kernel, c.M)
    coeffs.validate()
    d = ctx.cfg.discretization
    return TransportProblem(
        ctx.grid,
        ctx.quadrature,
        coeffs,
        ctx.T,
        a=ctx.field(c.a),
        g=float(c.g) if c.g else None,
        f=ctx.field(c.f),
        R=ctx.R(),
        dt=d.dt,
        cfl=d.cfl,
    )


def run_forward(cfg, threads=1) -> Outcome:
    ctx = resolve(cfg)
    prob = _forward_problem(ctx)
    traj = solve_forward(prob)
    out = _base(ctx)
    out.tables["traces.csv"] = traces_table(traj, stride=cfg.output.trace_stride)
    d0, d = outflow_data_norm(traj)
    out.summary = {"nt": prob.nt, "dt": prob.dt, "d0": d0, "d": d}
    return out


def run_carleman(cfg, threads=1) -> Outcome:
    ctx = resolve(cfg)
    prob = _forward_problem(ctx)
    traj = solve_forward(prob)
    cutoff = build_cutoff(ctx.T, ctx.geometry.delta)
    z, zg = cutoff_time_derivative(traj, cutoff)
    reports = carleman_scan(prob, ctx.partition, ctx.geometry.beta, z, zg, cfg.carleman.s_values())
    energy = [energy_check(prob, traj)]
    out = _base(ctx)
    out.tables.update(emit_plot_tables({"carleman": reports, "energy": energy}))
    scan = summarize_scan(reports)
    out.summary = {
        "nt": prob.nt,
        "dt": prob.dt,
        "sup_C_req": scan.sup_C,
        "s_at_sup": scan.s_at_sup,
        "knee_s0": scan.knee,
        "sup_at_window_edge": scan.edge_attained,
        "C_E": fit_energy_constant(energy),
        "energy_slack_2": energy[0].slack_2,
    }
    return out


def _gaussian(ctx, center, width, amplitude=1.0):
    return ctx.field(FieldRecipe("gaussian", amplitude=amplitude, center=list(center), width=width))


def _bounds_rows(ctx, records, groups, min_records):
    rows, skipped = [], []
    for gname, a0 in groups:
        members = [r for r in records if r.meta["group"] == gname]
        try:
            c_low, c_high = ratio_bounds(members, min_records)
        except DegenerateEnsemble:
            skipped.append(gname)
            continue
        rows.append(
            {"group": gname, "a0": a0, "n": len(members), "c_low": c_low, "c_high": c_high, "m": ctx.partition.m, "T": ctx.T}
        )
    return rows, skipped


def run_stability(cfg, threads=1) -> Outcome:
    ctx = resolve(cfg)
    st_cfg = cfg.stability
    setup = ctx.setup()
    c = cfg.coefficients
    rng = np.random.default_rng(cfg.seed)
    dim = cfg.geometry.dim
    centers = rng.uniform(0.15, 0.85, (st_cfg.ensemble, dim))
    sigma1 = ctx.field(c.sigma)
    hump = ctx.field(c.a)
    if st_cfg.mode == "twin":
        jobs = [
            (a0, i, eps)
            for a0 in st_cfg.a0_levels
            for i in range(st_cfg.ensemble)
            for eps in st_cfg.epsilons
        ]
        # a = a0 + hump and inflow a0 + g agree on the boundary when the hump vanishes there
        if np.any(hump < 0):
            raise PositivityViolated("twin mode adds the floor a0 to the initial recipe, which must be >= 0")

        def job(spec):
            a0, i, eps = spec
            bump = _gaussian(ctx, centers[i], st_cfg.width)
            return twin_experiment(
                setup, sigma1, sigma1 + eps * bump, a0 + hump, g=a0 + c.g, a0=a0,
                meta={"group": f"a0={a0!r}", "member": i, "epsilon": eps, "a0": a0},
            )

        groups = [(f"a0={a0!r}", a0) for a0 in st_cfg.a0_levels]
    else:
        amps = rng.uniform(0.5, 1.5, st_cfg.ensemble)
        a0 = min(st_cfg.a0_levels)
        jobs = list(range(st_cfg.ensemble))
        R = ctx.R()
        probe = setup.problem(sigma1, a=hump, f=0.0, R=R)
        probe.check_positivity(a0)

        def job(i):
            f = _gaussian(ctx, centers[i], st_cfg.width, amps[i])
            return source_experiment(
                setup, sigma1, f, R=R, a=hump, meta={"group": "source", "member": i, "epsilon": "", "a0": a0}
            )

        groups = [("source", a0)]
    records = _map(job, jobs, threads)
    rows, skipped = _bounds_rows(ctx, records, groups, st_cfg.min_records)
    out = _base(ctx)
    out.tables.update(emit_plot_tables({"records": records, "ratio_bounds": rows}))
    out.summary = {"records": len(records), "bounds": rows, "groups_below_min_records": skipped}
    return out


def run_reconstruct(cfg, threads=1) -> Outcome:
    ctx = resolve(cfg)
    rc = cfg.reconstruct
    c = cfg.coefficients
    setup = ctx.setup()
    truth = ctx.field(rc.truth)
    a = ctx.field(c.a)
    g = float(c.g) if c.g else None
    traj = solve_forward(setup.problem(truth, a=a, g=g))
    pattern = noise_pattern(outflow_traces(traj), np.random.default_rng(cfg.seed))
    init = ctx.field(rc.init)

    def job(level):
        observed = add_noise(traj, level, pattern=pattern)
        return reconstruct_sigma(
            setup, observed, a, g, sigma_init=init, iterations=rc.iterations, sigma_true=truth,
            penalty=rc.penalty, noise_level=level, velocity_dependent=rc.velocity_dependent,
        )

    runs = _map(job, rc.noise_levels, threads)
    out = _base(ctx)
    out.tables.update(emit_plot_tables({"runs": runs, "grid": ctx.grid}))
    out.summary = {
        "runs": [
            {"noise_level": r.noise_level, "final_error": r.final_error, "iterations": r.iterations, "status": r.status}
            for r in runs
        ]
    }
    return out


RUNNERS = {
    "partition": run_partition,
    "forward": run_forward,
    "carleman": run_carleman,
    "stability": run_stability,
    "reconstruct": run_reconstruct,
}
