"""Deep wells flatten every bump: the effective Hamiltonian becomes quasi-convex.

With mbar = 2.5 the potential oscillation exceeds the bump height minus the
well depth of the W-well, so the level sets of Hbar are intervals.  The sweep
checks that the slope intervals at increasing levels are disjoint and leave
only small gaps.
"""
import numpy as np

from nonconvex_hj import (
    PeriodicAnalytic, PiecewiseMonotoneHamiltonian, effective_large_osc, sweep_intervals,
)

H = PiecewiseMonotoneHamiltonian.from_knots([0, 1, 2], [0, 3, 1], -3, 1)
V = PeriodicAnalytic.cosine(2.5)
curve = effective_large_osc(H, V)

p = np.linspace(-2.0, 5.0, 400)
v = curve(p)
interior_max = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])
print(f"min Hbar = {v.min():.3e}; interior local maxima: {int(interior_max.sum())}")
for f in curve.flats():
    print(f"flat at level {f.level:.4f} on [{f.p_lo:.4f}, {f.p_hi:.4f}]")

sw = sweep_intervals(H, V)
print(f"sweep: {len(sw.intervals)} levels, disjoint={sw.disjoint}, largest gap {sw.max_gap:.2e}")
