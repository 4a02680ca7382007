"""Top eigenvalues against classical locations, and eigenvector sup-norms."""

from sparsemp.ensemble import EnsembleParams
from sparsemp.experiments import ExperimentConfig, run_rigidity_deloc

N = 600
cfg = ExperimentConfig(EnsembleParams(N=N, M=N // 2, q=N**0.4, seed=7), trials=10, j_max=8)
rep = run_rigidity_deloc(cfg)
s = rep["summary"]
print(" j   lambda_j (trial 0)   gamma_j")
for r in rep["records"][:8]:
    print(f"{r['j']:2d}   {r['lambda_j']:18.4f}   {r['gamma_j']:.4f}")
print(f"\nrigidity: fraction within bound {s['rigidity_fraction']:.3f}, worst ratio {s['rigidity_max_ratio']:.2f}")
print(
    f"delocalisation: max sup-norm {s['deloc_max']:.3f} vs N^-1/4 = {s['deloc_bound']:.3f}; "
    f"fraction under the bound {s['deloc_fraction']:.2f}, "
    f"with the R^M part rescaled {s['deloc_dimension_scaled_fraction']:.2f}"
)
