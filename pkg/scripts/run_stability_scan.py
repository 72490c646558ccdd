"""Twin-experiment ratios over epsilon, and the c_high trend as the floor a0 drops."""
from carleman_rte import studies

setup = studies.stability_setup()
for r in studies.epsilon_scan(setup=setup):
    print(f"eps={r.meta['epsilon']:.0e}  lhs={r.lhs:.4g}  data={r.data_norm:.4g}  data/lhs={r.data_norm / r.lhs:.4f}")
for a0, lo, hi in studies.floor_trend(setup=setup):
    print(f"a0={a0:<5}  c_low={lo:.4g}  c_high={hi:.4g}")
print(f"homogeneity spread {studies.homogeneity_spread(setup=setup):.2e}")
