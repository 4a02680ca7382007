"""Empirical Stieltjes transform against the corrected law down to small eta."""

import numpy as np

from sparsemp.ensemble import EnsembleParams
from sparsemp.experiments import ExperimentConfig, run_local_law

N = 1000
cfg = ExperimentConfig(
    EnsembleParams(N=N, M=N // 2, q=N**0.25, seed=4),
    trials=5,
    eta_grid=list(np.geomspace(1e-3, 1.0, 7)),
)
rep = run_local_law(cfg)
print(f"fraction of points with |m - m~| <= 10 (1/q^2 + 1/(N eta)): {rep['summary']['fraction_within']:.3f}")
print("\n       E       eta    |m - m~|     bound")
for r in rep["records"][:14]:
    print(f"{r['E']:8.4f}  {r['eta']:8.4f}  {r['Lambda']:9.2e}  {r['bound']:9.2e}")
