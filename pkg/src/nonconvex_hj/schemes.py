"""Monotone Godunov numerical Hamiltonian shared by the cell solver and the evolution solver.

A *flux* is any object with vectorized ``__call__``, ``derivative``,
``range_min(a, b)``, ``range_max(a, b)`` (for ``a <= b``) and a
``lipschitz_bound`` attribute.  :class:`PiecewiseMonotoneHamiltonian`
qualifies directly; :class:`TabulatedFlux` wraps a sampled curve.
"""
from __future__ import annotations

import numpy as np


def godunov(flux, a, b) -> np.ndarray:
    """``min_{[a, b]} H`` when ``a <= b`` and ``max_{[b, a]} H`` otherwise.

    ``a`` is the backward difference and ``b`` the forward difference; the
    result is nondecreasing in ``a`` and nonincreasing in ``b``.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return np.where(a <= b, flux.range_min(lo, hi), flux.range_max(lo, hi))


def godunov_with_slopes(flux, a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flux value and its one-sided partial derivatives ``(dG/da >= 0, dG/db <= 0)``.

    The extremum over the interval is attained either at an end (then the
    derivative is the slope of ``H`` there, clipped to the monotone sign) or at
    an interior turning point (derivative zero).
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    g = godunov(flux, a, b)
    ha, hb = flux(a), flux(b)
    da = np.where(g == ha, np.maximum(flux.derivative(a), 0.0), 0.0)
    db = np.where((g == hb) & (g != ha), np.minimum(flux.derivative(b), 0.0), 0.0)
    return g, da, db


class TabulatedFlux:
    """Piecewise-linear interpolant of samples ``(p_k, H_k)`` with linear extension.

    Interval extrema are exact for the interpolant: they occur at the ends or
    at local extrema of the samples, which are grouped into plateaus so a
    flat stretch costs one comparison.
    """

    def __init__(self, p: np.ndarray, values: np.ndarray):
        p, v = np.asarray(p, float), np.asarray(values, float)
        if p.ndim != 1 or len(p) < 2 or np.any(np.diff(p) <= 0):
            raise ValueError("table abscissae must be strictly increasing")
        self.p, self.v = p, v
        self._slopes = np.diff(v) / np.diff(p)
        self.lipschitz_bound = float(np.max(np.abs(self._slopes)))
        self.turning = self._plateaus()

    def _plateaus(self) -> list[tuple[float, float, float, str]]:
        """``(p_start, p_end, level, "max"|"min")`` for interior extremal plateaus."""
        v = self.v
        out = []
        i, n = 1, len(v)
        while i < n - 1:
            j = i
            while j + 1 < n - 1 and v[j + 1] == v[i]:
                j += 1
            left, right = v[i - 1], v[j + 1]
            if v[i] >= left and v[i] >= right and (v[i] > left or v[i] > right):
                out.append((self.p[i], self.p[j], float(v[i]), "max"))
            elif v[i] <= left and v[i] <= right and (v[i] < left or v[i] < right):
                out.append((self.p[i], self.p[j], float(v[i]), "min"))
            i = j + 1
        return out

    def __call__(self, q):
        q = np.asarray(q, float)
        out = np.interp(q, self.p, self.v)
        out = np.where(q < self.p[0], self.v[0] + self._slopes[0] * (q - self.p[0]), out)
        return np.where(q > self.p[-1], self.v[-1] + self._slopes[-1] * (q - self.p[-1]), out)

    def derivative(self, q):
        q = np.asarray(q, float)
        idx = np.clip(np.searchsorted(self.p, q, side="right") - 1, 0, len(self._slopes) - 1)
        return self._slopes[idx]

    def _range(self, a, b, kind):
        a, b = np.asarray(a, float), np.asarray(b, float)
        pick = np.maximum if kind == "max" else np.minimum
        out = pick(self(a), self(b))
        for s, t, level, k in self.turning:
            if k == kind:
                out = np.where((a < t) & (s < b), pick(out, level), out)
        return out

    def range_max(self, a, b):
        return self._range(a, b, "max")

    def range_min(self, a, b):
        return self._range(a, b, "min")
