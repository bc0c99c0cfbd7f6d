"""Corrector slope fields at a level where two admissible selections differ.

At level mu = 1 under the mbar = 2.5 well, the largest and smallest admissible
branch selections differ on one interval of the period.  Moving a single switch
point between them traces out every average slope in between.
"""
import numpy as np

from nonconvex_hj import PeriodicAnalytic, PiecewiseMonotoneHamiltonian, inf_admissible, sup_admissible
from nonconvex_hj.corrector import expected_slope, transition_slope, verify_metric_solution

H = PiecewiseMonotoneHamiltonian.from_knots([0, 1, 2], [0, 3, 1], -3, 1)
V = PeriodicAnalytic.cosine(2.5)
mu = 1.0

up, dn = sup_admissible(H, V, mu), inf_admissible(H, V, mu)
print("intervals:", [(round(a, 4), round(b, 4)) for a, b in up.decomposition.intervals])
print("sup selection", up.branches, f"E f = {up.expected():.6f}")
print("inf selection", dn.branches, f"E f = {dn.expected():.6f}")
for t in np.linspace(0, 1, 5):
    f = transition_slope(H, V, mu, t)
    rep = verify_metric_solution(f, H)
    print(f"t = {t:.2f}  E f = {expected_slope(f):.6f}  verified = {rep.passed}")
