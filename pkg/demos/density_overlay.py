"""Histogram of pooled sparse spectra against the corrected and the plain law."""

from sparsemp.ensemble import EnsembleParams
from sparsemp.experiments import ExperimentConfig, run_density_compare

N = 1000
cfg = ExperimentConfig(EnsembleParams(N=N, M=N // 2, q=N**0.25, seed=3), trials=10, bins=30)
rep = run_density_compare(cfg)
s = rep["summary"]
print(f"pooled eigenvalues {s['pooled']}, atom mass {s['atom_mass']:.3f}, outside support {s['tail_mass']:.4f}")
print(f"sum of squared bin deviations: corrected {s['ssd_corrected']:.2e}, MP {s['ssd_mp']:.2e}")
print("\n  bin centre   empirical   corrected        MP")
for r in rep["records"][::3]:
    c = 0.5 * (r["E_lo"] + r["E_hi"])
    print(f"{c:10.3f}   {r['fraction']:9.5f}   {r['expected']:9.5f}   {r['expected_mp']:7.5f}")
