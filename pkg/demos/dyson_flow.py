"""Following the largest eigenvalue along the Dyson matrix flow towards a Gaussian ensemble."""

from sparsemp.ensemble import EnsembleParams
from sparsemp.experiments import ExperimentConfig, run_flow_tracking

N = 400
cfg = ExperimentConfig(EnsembleParams(N=N, M=N // 2, q=5.0, seed=6), trials=20, t_grid=[0, 0.5, 1, 2, 4, 8])
rep = run_flow_tracking(cfg)
print("   t    mean lambda_1    L_t (Newton)   L_t (leading order)")
for r in rep["records"]:
    print(f"{r['t']:4.1f}   {r['mean_lambda1']:12.4f}   {r['L_newton']:12.4f}   {r['L_asymptotic']:12.4f}")
s = rep["summary"]
print(f"\nL_t decreasing: {s['L_newton_monotone']}; slope at 0 {s['slope_fd']:.4f} vs leading order {s['Ldot0']:.4f}")
print(f"endpoint mean {s['endpoint_mean']:.4f} vs Gaussian ensemble {s['gaussian_mean']:.4f} (SE {s['endpoint_se']:.4f})")
