"""Manufactured-solution convergence of the upwind solver."""
import argparse

from carleman_rte import studies

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--cells", type=int, nargs="+", default=[16, 32, 64])
args = p.parse_args()

errs, order = studies.mms_order(tuple(args.cells))
for n, e in zip(args.cells, errs):
    print(f"n={n:4d}  error={e:.5g}")
print(f"observed order {order:.3f}")
