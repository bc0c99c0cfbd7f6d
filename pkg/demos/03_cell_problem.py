"""Cross-check the formula against the discounted cell problem.

For each momentum p the discounted problem lam v + H(p + v') + V = 0 is solved
on one period with a Godunov scheme, and -lam v(0) is extrapolated to lam = 0.
"""
from nonconvex_hj import PeriodicAnalytic, PiecewiseMonotoneHamiltonian, compute_effective, estimate_Hbar

H = PiecewiseMonotoneHamiltonian.from_knots([0, 1, 2], [0, 3, 1], -3, 1)
V = PeriodicAnalytic.cosine(1.0)
curve = compute_effective(H, V)

print("    p   formula   cell estimate   error bar")
for p in (-1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0):
    est = estimate_Hbar(H, V, p)
    print(f"{p:5.2f} {float(curve(p)):9.4f} {est.value:14.4f} {est.error_bar:11.2e}")
