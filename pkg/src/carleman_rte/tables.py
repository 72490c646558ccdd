"""Tidy CSV tables and atomic file output.

Dialect: comma separated, '.' decimal, one header row, LF line endings.
Floats are written with ``repr`` (shortest round-trip form), so identical
numbers always give identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .transport import side_name


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        k = self.header.index(name)
        return [r[k] for r in self.rows]


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def render_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.header)
    for row in table.rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_atomic(path, text: str):
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, table: Table):
    return write_atomic(path, render_csv(table))


def write_json(path, obj):
    return write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- table builders ---------------------------------------------------------
def kappa_table(partition) -> Table:
    dim = partition.domain.dim
    header = ["cell", "l", "theta_lo", "theta_hi"]
    if dim == 3:
        header += ["phi_lo", "phi_hi"]
    header += [f"gamma_{d}" for d in range(dim)] + ["kappa"]
    t = Table(header)
    for c in partition.cells:
        row = [c.index, "-".join(str(x) for x in c.l), *c.theta]
        if dim == 3:
            row += list(c.phi)
        row += [float(g) for g in partition.gammas[c.index]] + [float(partition.kappas[c.index])]
        t.rows.append(row)
    return t


def partition_summary(partition, geom=None) -> dict:
    """Structured description of the partition and time geometry."""
    d = partition.domain
    out = {
        "dim": d.dim,
        "v0": d.v0,
        "v1": d.v1,
        "counts": list(partition.counts),
        "m": partition.m,
        "kappa_min": float(partition.kappa_min),
        "cells": [
            {
                "index": c.index,
                "l": list(c.l),
                "theta": list(c.theta),
                **({"phi": list(c.phi)} if c.phi is not None else {}),
                "gamma": [float(g) for g in partition.gammas[c.index]],
                "kappa": float(partition.kappas[c.index]),
            }
            for c in partition.cells
        ],
    }
    if geom is not None:
        out["time_geometry"] = {k: float(getattr(geom, k)) for k in geom.__dataclass_fields__}
    return out


def carleman_table(reports) -> Table:
    t = Table(["s", "lhs_init", "lhs_bulk", "rhs_interior", "rhs_boundary", "C_req"])
    for r in reports:
        t.rows.append([r.s, r.lhs_init, r.lhs_bulk, r.rhs_interior, r.rhs_boundary, r.C_req])
    return t


def energy_table(reports) -> Table:
    """Long format: one row per (member, time level)."""
    t = Table(["member", "t", "E", "cum_outflow", "cum_inflow"])
    for i, r in enumerate(reports):
        for n in range(len(r.t)):
            t.rows.append([i, r.t[n], r.E[n], r.cum_outflow[n], r.cum_inflow[n]])
    return t


def energy_summary_table(reports) -> Table:
    t = Table(["member", "data_terms", "lhs_1", "rhs_1", "constant_1", "lhs_2", "rhs_2", "slack_2"])
    for i, r in enumerate(reports):
        t.rows.append([i, r.data_terms, r.lhs_1, r.rhs_1, r.constant_1, r.lhs_2, r.rhs_2, r.slack_2])
    return t


RECORD_META = ("group", "member", "epsilon", "a0")


def records_table(records) -> Table:
    t = Table(["kind", *RECORD_META, "lhs", "data_norm", "init_terms", "ratio_data_lhs", "ratio_lhs_data"])
    for r in records:
        meta = [r.meta.get(k, "") for k in RECORD_META]
        t.rows.append([r.kind, *meta, r.lhs, r.data_norm, r.init_terms, r.ratio_data_lhs, r.ratio_lhs_data])
    return t


def ratio_bounds_table(rows) -> Table:
    """``rows`` holds dicts with group, a0, n, c_low, c_high, m, T."""
    t = Table(["group", "a0", "n", "c_low", "c_high", "m", "T"])
    for r in rows:
        t.rows.append([r["group"], r["a0"], r["n"], r["c_low"], r["c_high"], r["m"], r["T"]])
    return t


def history_table(runs) -> Table:
    t = Table(["noise_level", "iteration", "J", "rel_error", "step"])
    for run in runs:
        for i, J in enumerate(run.J):
            err = run.errors[i] if i < len(run.errors) else math.nan
            step = run.steps[i - 1] if i > 0 else math.nan
            t.rows.append([run.noise_level, i, J, err, step])
    return t


def noise_table(runs) -> Table:
    t = Table(["noise_level", "final_error", "iterations", "final_J", "status"])
    for run in runs:
        t.rows.append([run.noise_level, run.final_error, run.iterations, run.J[-1], run.status])
    return t


def sigma_table(grid, runs) -> Table:
    """Final estimates on the grid, one row per (noise level, cell)."""
    header = ["noise_level"] + [f"i{d}" for d in range(grid.dim)] + ["sigma"]
    t = Table(header)
    for run in runs:
        sig = run.sigma
        if sig.ndim > grid.dim:  # velocity-dependent: report the velocity mean
            sig = sig.mean(axis=0)
        for idx in np.ndindex(*grid.shape):
            t.rows.append([run.noise_level, *idx, sig[idx]])
    return t


def run_history_table(records=(), runs=()) -> Table:
    """Summary rows for every record and reconstruction run of one invocation."""
    t = Table(["entry", "kind", "noise_level", "lhs", "data_norm", "final_error", "iterations"])
    for i, r in enumerate(records):
        t.rows.append([i, r.kind, "", r.lhs, r.data_norm, "", ""])
    for j, run in enumerate(runs):
        t.rows.append([len(records) + j, "reconstruction", run.noise_level, "", "", run.final_error, run.iterations])
    return t


def traces_table(traj, stride=1, outflow_only=True) -> Table:
    """Boundary traces, one row per (t, face, x-index, v-index)."""
    t = Table(["t", "face", "x_index", "v_index", "value"])
    nv = traj.quadrature.nv
    for n in range(0, traj.nt + 1, stride):
        for side in traj.grid.sides:
            tr = traj.trace(side)[n]
            mask = traj.outflow_mask(side) if outflow_only else np.ones(nv, bool)
            flat = tr.reshape(nv, -1)
            name = side_name(side)
            for q in np.flatnonzero(mask):
                for k in range(flat.shape[1]):
                    t.rows.append([traj.t[n], name, k, int(q), flat[q, k]])
    return t


def emit_plot_tables(artifacts: dict) -> dict:
    """Map run artifacts to tidy tables.

    Recognised keys: ``carleman`` (reports), ``energy`` (reports),
    ``records`` (StabilityRecords), ``ratio_bounds`` (dict rows), ``runs``
    (ReconstructionRuns; also needs ``grid`` for the estimates table).
    Missing or empty inputs give header-only tables.
    """
    out = {}
    if "carleman" in artifacts:
        out["carleman.csv"] = carleman_table(artifacts["carleman"])
    if "energy" in artifacts:
        out["energy.csv"] = energy_table(artifacts["energy"])
        out["energy_summary.csv"] = energy_summary_table(artifacts["energy"])
    if "records" in artifacts:
        out["records.csv"] = records_table(artifacts["records"])
    if "ratio_bounds" in artifacts:
        out["ratio_bounds.csv"] = ratio_bounds_table(artifacts["ratio_bounds"])
    if "runs" in artifacts:
        out["history.csv"] = history_table(artifacts["runs"])
        out["noise.csv"] = noise_table(artifacts["runs"])
        if "grid" in artifacts:
            out["sigma.csv"] = sigma_table(artifacts["grid"], artifacts["runs"])
    if "records" in artifacts or "runs" in artifacts:
        out["run_history.csv"] = run_history_table(artifacts.get("records", ()), artifacts.get("runs", ()))
    return out
