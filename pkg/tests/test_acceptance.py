"""Acceptance criteria, one PASS/FAIL line each.

Verdict lines are collected into an "acceptance criteria" section of the
pytest summary.  The module takes several minutes, mostly reconstruction.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from carleman_rte import studies
from carleman_rte.cli import main
from carleman_rte.errors import TimeTooShort
from carleman_rte.partition import (
    SpatialBox,
    admissible_time_geometry,
    check_time_geometry,
    make_partition,
    minimal_time,
)

pytestmark = pytest.mark.acceptance


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.s = time.perf_counter() - self.t0


def test_c01_partition_soundness(verdict):
    with Timer() as tm:
        kmin, multi, empty, positive = [], 0, 0, True
        for L0 in (4, 8, 16):
            p = make_partition(2, 1.0, 2.0, [L0])
            positive &= bool(np.all(p.kappas > 0))
            kmin.append(p.kappa_min)
            e, m = studies.tiling_multi_hits(p, 100_000, seed=L0)
            multi += m
            empty += e
    ok = positive and all(b >= a for a, b in zip(kmin, kmin[1:])) and multi == 0 and empty == 0 and tm.s < 5
    verdict(1, "partition soundness", ok,
            f"kappa_min={[round(k, 4) for k in kmin]} multi_hits={multi} misses={empty} t={tm.s:.2f}s")


def test_c02_admissibility_gates(verdict):
    with Timer() as tm:
        part, box = studies.quadrant(), SpatialBox.unit(2)
        T_min = minimal_time(box, part)
        geom = admissible_time_geometry(box, part, 2 * T_min)
        invariants = check_time_geometry(box, part, geom, nt=200)
        try:
            admissible_time_geometry(box, part, 0.5 * T_min)
            rejected = False
        except TimeTooShort:
            rejected = True
    ok = invariants and rejected and tm.s < 1
    verdict(2, "admissibility gates", ok,
            f"T_min={T_min:.6g} beta={geom.beta:.4g} delta={geom.delta:.4g} reject_half={rejected} t={tm.s:.2f}s")


def test_c03_solver_order(verdict):
    with Timer() as tm:
        errs, order = studies.mms_order((16, 32, 64))
        rng = np.random.default_rng(2024)
        sup = max(studies.superposition_defect(rng) for _ in range(20))
        pos = min(studies.positivity_min(rng) for _ in range(20))
    ok = order >= 0.9 and sup < 1e-12 and pos >= 0.0 and tm.s < 120
    verdict(3, "solver order", ok,
            f"errors={[f'{e:.4g}' for e in errs]} order={order:.3f} superposition={sup:.2e} "
            f"min_u={pos:.3g} t={tm.s:.1f}s")


def test_c04_adjoint_gradient(verdict):
    with Timer() as tm:
        rel = studies.gradient_fd_errors(seed=4, directions=5)
    ok = max(rel) <= 1e-4 and tm.s < 120
    verdict(4, "adjoint gradient", ok, f"max_rel={max(rel):.2e} t={tm.s:.1f}s")


def test_c05_carleman_scan(verdict):
    with Timer() as tm:
        _, coarse = studies.carleman_study(32)
        _, fine = studies.carleman_study(64)
    change = abs(fine.sup_C / coarse.sup_C - 1.0)
    ok = (
        math.isfinite(coarse.sup_C) and math.isfinite(fine.sup_C)
        and not coarse.edge_attained and not fine.edge_attained
        and change <= 0.25 and tm.s < 600
    )
    verdict(5, "Carleman scan", ok,
            f"sup32={coarse.sup_C:.4g}@s={coarse.s_at_sup:.3g} sup64={fine.sup_C:.4g}@s={fine.s_at_sup:.3g} "
            f"change={change:.1%} knee32={coarse.knee:.3g} t={tm.s:.0f}s")


def test_c06_energy_estimates(verdict):
    with Timer() as tm:
        rep1, c1 = studies.energy_ensemble(cfl=0.9)
        rep2, c2 = studies.energy_ensemble(cfl=0.45)
        defect, rise = studies.dissipation_defect()
    finite = all(math.isfinite(v) for r in rep1 + rep2 for v in (r.lhs_1, r.rhs_1, r.lhs_2, r.rhs_2))
    drift = abs(c2 / c1 - 1.0)
    ok = len(rep1) == 10 and finite and math.isfinite(c1) and drift <= 0.3 and defect <= 1e-10 and tm.s < 300
    verdict(6, "energy estimates", ok,
            f"C_E={c1:.4g} C_E(dt/2)={c2:.4g} drift={drift:.1%} "
            f"min_slack_2={min(r.slack_2 for r in rep1):.3g} identity={defect:.1e} t={tm.s:.0f}s")


@pytest.fixture(scope="module")
def stab_setup():
    return studies.stability_setup()


def test_c07_both_sided_stability(verdict, stab_setup):
    with Timer() as tm:
        recs = studies.epsilon_scan((1e-3, 1e-2, 1e-1), setup=stab_setup)
        twin = studies.identical_twin(setup=stab_setup)
        homog = studies.homogeneity_spread(setup=stab_setup)
    ratios = np.array([r.data_norm / r.lhs for r in recs])
    spread = (ratios.max() - ratios.min()) / ratios.min()
    iff = (twin.lhs <= 1e-9 and twin.data_norm <= 1e-9
           and all(r.lhs > 1e-9 and r.data_norm > 1e-9 for r in recs))
    ok = spread <= 0.3 and iff and homog <= 1e-10 and tm.s < 600
    verdict(7, "both-sided stability", ok,
            f"ratios={[f'{x:.4g}' for x in ratios]} spread={spread:.1%} "
            f"twin=({twin.lhs:.1e},{twin.data_norm:.1e}) homogeneity={homog:.1e} t={tm.s:.0f}s")


def test_c08_blow_up_trend(verdict, stab_setup):
    with Timer() as tm:
        trend = studies.floor_trend((0.5, 0.1, 0.02), setup=stab_setup)
    c_high = [c for _, _, c in trend]
    ok = all(b > a for a, b in zip(c_high, c_high[1:])) and tm.s < 600
    verdict(8, "blow-up trend", ok,
            f"a0={[a for a, _, _ in trend]} c_high={[f'{c:.4g}' for c in c_high]} t={tm.s:.0f}s")


def test_c09_reconstruction(verdict):
    with Timer() as tm:
        study = studies.reconstruction_study((0.0, 0.005, 0.01, 0.02), iterations=200)
    exact = study.runs[0]
    noisy = {r.noise_level: r.final_error for r in study.runs[1:]}
    ok = exact.final_error <= 0.10 and exact.iterations <= 200 and study.r2 >= 0.9 and tm.s < 1200
    verdict(9, "reconstruction", ok,
            f"exact_err={exact.final_error:.4f} after {exact.iterations} it; "
            f"noisy={ {k: round(v, 4) for k, v in noisy.items()} } R2={study.r2:.3f} t={tm.s:.0f}s")


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


def test_c10_determinism(verdict, tmp_path):
    root = Path(__file__).resolve().parents[1] / "configs"
    same = []
    for name, over in [
        ("forward.yaml", {}),
        ("carleman.yaml", {"discretization": {"cells": 16}}),
        ("stability_twin.yaml", {"discretization": {"cells": 12}}),
        ("stability_source.yaml", {"discretization": {"cells": 12}}),
        ("reconstruct.yaml", {"discretization": {"cells": 12}, "reconstruct": {"iterations": 5}}),
    ]:
        cfg = yaml.safe_load((root / name).read_text())
        for sec, vals in over.items():
            cfg.setdefault(sec, {}).update(vals)
        path = tmp_path / name
        path.write_text(yaml.safe_dump(cfg))
        exp = cfg["experiment"]
        first, second = tmp_path / f"{name}.a", tmp_path / f"{name}.b"
        assert main([exp, "--config", str(path), "--out", str(first)]) == 0
        assert main([exp, "--config", str(first / "manifest.json"), "--out", str(second)]) == 0
        a, b = _csvs(first), _csvs(second)
        manifest = json.loads((first / "manifest.json").read_text())
        same.append(bool(a) and a == b and {e["path"] for e in manifest["outputs"]} >= set(a))
    verdict(10, "determinism", all(same), f"manifest replays byte-identical: {same}")
