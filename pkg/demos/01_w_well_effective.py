"""The W-well Hamiltonian under a shallow cosine well.

H has branches 3|p| (p <= 0), 3p, 5 - 2p and p - 1, so it has one bump
(height 3 at p = 1) and one well (height 1 at p = 2).  With V(y) =
-(mbar/2)(1 - cos 2 pi y) and mbar = 1 the oscillation is small, and the
effective Hamiltonian is piecewise linear with three flat pieces.
"""
import numpy as np

from nonconvex_hj import PeriodicAnalytic, PiecewiseMonotoneHamiltonian, compute_effective

H = PiecewiseMonotoneHamiltonian.from_knots([0, 1, 2], [0, 3, 1], -3, 1)
V = PeriodicAnalytic.cosine(1.0)
curve = compute_effective(H, V)

print("breakpoints:", np.round(curve.breakpoints, 6))
print("flat pieces:")
for f in sorted(curve.flats(), key=lambda f: f.p_lo):
    print(f"  level {f.level:.3f} on [{f.p_lo:.4f}, {f.p_hi:.4f}]")
print("\n   p      H(p)   Hbar(p)")
for p in np.linspace(-1.0, 3.5, 10):
    print(f"{p:6.2f} {float(H(p)):8.4f} {float(curve(p)):8.4f}")
