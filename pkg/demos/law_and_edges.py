"""Corrected law versus Marchenko-Pastur: Stieltjes transform, density and edges."""

from sparsemp.law import LawParams, density, edge_newton, mp_density, mp_edges, solve_self_consistent

d = 2.0
print(f"aspect ratio d = {d}, MP edges {mp_edges(d)}")
for q in (5.0, 10.0, 30.0, float("inf")):
    law = LawParams(d=d, q=q, s4=1.0)
    plus, minus = edge_newton(law, "plus"), edge_newton(law, "minus")
    print(
        f"q = {q:>5}: L_plus = {plus.L:.6f} (leading order {plus.L_plus_asym:.6f}), "
        f"L_minus = {minus.L:.6f}, dL_plus/dt = {plus.Ldot:.2e}"
    )

law = LawParams(d=d, q=8.0, s4=1.0)
sol = solve_self_consistent(1.5 + 0.01j, law)
print(f"\nw(1.5 + 0.01i) at q = 8: {sol.w:.6f}, quartic residual {sol.residual:.1e}")
print("\n   E      rho_corrected   rho_MP")
for E in (0.1, 0.5, 1.0, 2.0, 2.8, 2.9):
    print(f"{E:5.2f}   {density(E, law):12.6f}   {mp_density(E, d):8.6f}")
