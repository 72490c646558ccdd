"""Projected-gradient reconstruction of a box bump in sigma, exact and noisy data."""
import argparse

from carleman_rte import studies

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.005, 0.01, 0.02])
p.add_argument("--iterations", type=int, default=200)
p.add_argument("--cells", type=int, default=32)
args = p.parse_args()

study = studies.reconstruction_study(tuple(args.noise), args.iterations, n=args.cells)
for r in study.runs:
    print(f"noise={r.noise_level:<6}  error={r.final_error:.4f}  iterations={r.iterations}  {r.status}")
print(f"error ~ {study.slope:.3f} * noise + {study.intercept:.4f}   R^2={study.r2:.3f}")
