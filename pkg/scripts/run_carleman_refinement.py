"""Carleman scan on two grids; prints the supremum of C_req and its location."""
import argparse

import numpy as np

from carleman_rte import studies

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--cells", type=int, nargs="+", default=[32, 64])
p.add_argument("--s-count", type=int, default=391)
args = p.parse_args()

s_values = np.linspace(1.0, 40.0, args.s_count)
sups = []
for n in args.cells:
    reports, summ = studies.carleman_study(n, s_values)
    sups.append(summ.sup_C)
    print(f"n={n:3d}  sup C_req={summ.sup_C:.4g} at s={summ.s_at_sup:.3g}  knee={summ.knee:.3g}  "
          f"edge={summ.edge_attained}")
for a, b in zip(sups, sups[1:]):
    print(f"relative change {abs(b / a - 1):.1%}")
