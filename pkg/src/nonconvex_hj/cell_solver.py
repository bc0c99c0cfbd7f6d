"""Discounted cell problem ``lam v + H(p + v') + V(y) = 0`` as an independent oracle for ``Hbar``.

The gradient term uses the monotone Godunov flux.  The nonlinear system is
solved by semismooth Newton (the Jacobian is a cyclic tridiagonal M-matrix)
with a residual line search; a damped fixed-point iteration is kept as a
fallback.  ``-lam v_lam(0)`` approximates ``Hbar(p)`` as ``lam -> 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .hamiltonian import PiecewiseMonotoneHamiltonian
from .potential import PotentialModel, PotentialPath
from .schemes import godunov, godunov_with_slopes

DEFAULT_LAMBDAS = (1e-2, 3e-3, 1e-3)


class CellSolverError(RuntimeError):
    def __init__(self, message: str, history: Sequence[float] = ()):
        super().__init__(message)
        self.history = list(history)


@dataclass
class CellSolution:
    p: float
    lam: float
    y: np.ndarray
    h: float
    values: np.ndarray
    residual: float
    iterations: int
    periodic: bool
    method: str = "newton"
    history: list = field(default_factory=list)
    tolerance: float = 0.0

    def value_at(self, y0: float = 0.0) -> float:
        """``v_lam(y0)`` by linear interpolation on the grid."""
        if self.periodic:
            L = self.h * len(self.y)
            yy = self.y[0] + (y0 - self.y[0]) % L
            return float(np.interp(yy, np.append(self.y, self.y[0] + L), np.append(self.values, self.values[0])))
        return float(np.interp(y0, self.y, self.values))

    @property
    def estimate(self) -> float:
        """``-lam v_lam(0)``."""
        return -self.lam * self.value_at(0.0)

    def sup_bound_ok(self, H: PiecewiseMonotoneHamiltonian, mbar: float, slack: float = 1e-6) -> bool:
        """``lam |v_lam| <= H(p) + mbar`` on the grid."""
        return bool(self.lam * np.max(np.abs(self.values)) <= float(H(self.p)) + mbar + slack)


def _differences(v: np.ndarray, h: float, periodic: bool) -> tuple[np.ndarray, np.ndarray]:
    if periodic:
        dm = (v - np.roll(v, 1)) / h
        dp = (np.roll(v, -1) - v) / h
    else:
        d = np.diff(v) / h
        dm = np.concatenate([[d[0]], d])      # one-sided extrapolation at the window ends
        dp = np.concatenate([d, [d[-1]]])
    return dm, dp


def _residual(H, v, Vy, p, lam, h, periodic):
    dm, dp = _differences(v, h, periodic)
    return lam * v + godunov(H, p + dm, p + dp) + Vy


def _jacobian(H, v, Vy, p, lam, h, periodic, floor: float = 0.0):
    """Residual and a generalized Jacobian.

    With ``floor > 0`` rows whose flux sits at an interior turning point (both
    one-sided slopes vanish) receive a symmetric coupling of total size
    ``floor``.  Without it such a row moves ``v_i`` by ``-F_i / lam``, which
    after grid interpolation throws the iterate far outside the region where
    the linearization is valid.
    """
    n = len(v)
    dm, dp = _differences(v, h, periodic)
    g, ga, gb = godunov_with_slopes(H, p + dm, p + dp)
    if floor > 0.0:
        deg = (ga - gb) < floor
        ga = np.where(deg, ga + 0.5 * floor, ga)
        gb = np.where(deg, gb - 0.5 * floor, gb)
    F = lam * v + g + Vy
    diag = lam + (ga - gb) / h
    lower = -ga / h        # coefficient of v_{i-1}
    upper = gb / h         # coefficient of v_{i+1}
    idx = np.arange(n)
    if periodic:
        rows = np.concatenate([idx, idx, idx])
        cols = np.concatenate([idx, (idx - 1) % n, (idx + 1) % n])
        data = np.concatenate([diag, lower, upper])
    else:
        # interior rows as above; end rows use the single available difference
        diag = diag.copy()
        rows, cols, data = [idx], [idx], []
        lo_i, up_i = idx[1:], idx[:-1]
        rows += [lo_i, up_i]
        cols += [lo_i - 1, up_i + 1]
        l2, u2 = lower[1:].copy(), upper[:-1].copy()
        # row 0: both differences equal (v1 - v0)/h
        c0 = float(H.derivative(np.array([p + dp[0]]))[0])
        cn = float(H.derivative(np.array([p + dm[-1]]))[0])
        diag[0] = lam - c0 / h
        u2[0] = c0 / h
        # row n-1: both differences equal (v_{n-1} - v_{n-2})/h
        diag[-1] = lam + cn / h
        l2[-1] = -cn / h
        data = [diag, l2, u2]
        rows, cols, data = np.concatenate(rows), np.concatenate(cols), np.concatenate(data)
    J = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return F, J


def _newton(H, v, Vy, p, lam, h, periodic, tol, max_iter, history, watchdog: int = 5):
    """Semismooth Newton with a watchdog.

    Full steps are taken while the residual stays within ten times the best
    one seen (the max-norm residual of a kinked system need not decrease
    monotonically); after ``watchdog`` non-improving steps the iteration
    returns to the best iterate and switches to a backtracking line search
    driven by the regularized Jacobian (see :func:`_jacobian`).
    """
    floor = 0.05 * max(float(H.lipschitz_bound), 1.0)
    F = _residual(H, v, Vy, p, lam, h, periodic)
    res = float(np.max(np.abs(F)))
    best_v, best = v, res
    k, misses, backtrack = 0, 0, False
    while best > tol and k < max_iter:
        F, J = _jacobian(H, v, Vy, p, lam, h, periodic, floor if backtrack else 0.0)
        step = spsolve(J.tocsc(), -F)
        if not np.all(np.isfinite(step)):
            break
        k += 1
        if not backtrack:
            cand = v + step
            rc = float(np.max(np.abs(_residual(H, cand, Vy, p, lam, h, periodic))))
            history.append(rc)
            if rc < best:
                best_v, best, misses = cand, rc, 0
            else:
                misses += 1
            if misses >= watchdog or not rc <= 10.0 * best:
                v, res, backtrack = best_v, best, True
            else:
                v, res = cand, rc
            continue
        t = 1.0
        while True:
            cand = v + t * step
            rc = float(np.max(np.abs(_residual(H, cand, Vy, p, lam, h, periodic))))
            if rc < res or t < 1e-6:
                break
            t *= 0.5
        if rc >= res:
            break
        v, res = cand, rc
        best_v, best = v, res
        history.append(res)
        if t == 1.0:
            # a full regularized step succeeded: give exact Newton another try
            backtrack, misses = False, 0
    return best_v, best, k


def _pseudo_transient(H, v, Vy, p, lam, h, periodic, tol, max_iter, history):
    """Linearly implicit pseudo-time steps ``(I/tau + J) dv = -F`` with growing ``tau``."""
    n = len(v)
    eye = sp.identity(n, format="csr")
    res = float(np.max(np.abs(_residual(H, v, Vy, p, lam, h, periodic))))
    tau = 1.0 / lam
    k = 0
    while res > tol and k < max_iter:
        F, J = _jacobian(H, v, Vy, p, lam, h, periodic)
        cand = v + spsolve((J + eye / tau).tocsc(), -F)
        rc = float(np.max(np.abs(_residual(H, cand, Vy, p, lam, h, periodic))))
        if np.isfinite(rc) and rc <= 1.5 * res:
            v, res, tau = cand, rc, min(2.0 * tau, 1e14)
            history.append(res)
        else:
            tau *= 0.25
        k += 1
    return v, res, k


def _fixed_point(H, v, Vy, p, lam, h, periodic, tol, max_iter, history, spread_only=False):
    """Damped explicit iteration ``v <- v - omega F(v)``, ``omega = h / (lip + lam h)``.

    With ``spread_only`` it stops once the residual is nearly constant in
    space: the remaining constant mode decays slowly here but is a single
    Newton step away.
    """
    omega = h / (H.lipschitz_bound + lam * h)
    F = _residual(H, v, Vy, p, lam, h, periodic)
    res = float(np.max(np.abs(F)))
    k = 0
    while res > tol and k < max_iter:
        v = v - omega * F
        F = _residual(H, v, Vy, p, lam, h, periodic)
        res = float(np.max(np.abs(F)))
        k += 1
        if spread_only and k % 16 == 0 and float(np.max(F) - np.min(F)) <= max(tol, 1e-4):
            break
        if k % 1000 == 0:
            history.append(res)
    return v, res, k


def rounding_floor(H, v, lam: float, h: float) -> float:
    """Smallest residual resolvable in double precision for values of size ``|v|``."""
    return 256.0 * np.finfo(float).eps * float(np.max(np.abs(v))) * (H.lipschitz_bound / h + lam)


def _grid(path: PotentialPath, h: float, periodic: bool) -> np.ndarray:
    n = max(int(round(path.length / h)), 4)
    hh = path.length / n
    return path.y_lo + hh * np.arange(n if periodic else n + 1)


def _solve_level(H, v, Vy, p, lam, h, periodic, tol, history, max_newton, max_ptc, max_fixed_point):
    """Newton; if it stalls, explicit sweeps (a few grid traversals) and Newton again; then PTC."""
    n = len(v)
    v, res, k1 = _newton(H, v, Vy, p, lam, h, periodic, tol, max_newton, history)
    steps, method = k1, "newton"
    if res > tol:
        v, res, k = _fixed_point(H, v, Vy, p, lam, h, periodic, tol, 4 * n, history, spread_only=True)
        steps += k
        v, res, k = _newton(H, v, Vy, p, lam, h, periodic, tol, max_newton, history)
        steps += k
        method = "newton+sweeps+newton"
    if res > tol:
        v, res, k = _pseudo_transient(H, v, Vy, p, lam, h, periodic, tol, max_ptc, history)
        steps += k
        method += "+ptc"
    if res > tol and max_fixed_point:
        v, res, k = _fixed_point(H, v, Vy, p, lam, h, periodic, tol, max_fixed_point, history)
        steps += k
        method += "+fixed_point"
    return v, res, steps, method


def solve_discounted(H: PiecewiseMonotoneHamiltonian, path: PotentialPath, p: float, lam: float,
                     h: float | None = None, tol: float = 1e-10, v0: np.ndarray | None = None,
                     max_newton: int = 30, max_ptc: int = 200, max_fixed_point: int = 0,
                     coarsest: int = 64) -> CellSolution:
    """Solve the discretized discounted cell problem on ``path``'s window.

    Periodic paths give a cyclic grid on one period; windows use one-sided
    extrapolation at both ends.  ``h`` defaults to the path's own step.
    Without a starting guess the system is first solved on a hierarchy of
    coarser grids (down to ``coarsest`` cells) and interpolated upwards; if
    that fails, the solution for ``2 lam`` is shifted by a constant and used
    as the starting guess.  The declared tolerance is raised to the
    double-precision rounding floor when that is larger.
    """
    args = (max_newton, max_ptc, max_fixed_point, coarsest)
    try:
        return _solve_discounted(H, path, p, lam, h, tol, v0, *args)
    except CellSolverError:
        if v0 is not None or 2.0 * lam > 1.0:
            raise
    outer = solve_discounted(H, path, p, 2.0 * lam, h, tol, None, *args)
    # lam v is nearly independent of lam: keep the corrector, move the constant
    start = outer.values + outer.estimate * (1.0 / (2.0 * lam) - 1.0 / lam)
    sol = _solve_discounted(H, path, p, lam, h, tol, start, *args)
    sol.method += "+discount_continuation"
    return sol


def _solve_discounted(H, path, p, lam, h, tol, v0, max_newton, max_ptc, max_fixed_point,
                      coarsest) -> CellSolution:
    if not 0.0 < lam <= 1.0:
        raise ValueError("discount must lie in (0, 1]")
    periodic = bool(path.periodic)
    h = path.h if h is None else h
    y = _grid(path, h, periodic)
    h = float(y[1] - y[0])
    if not periodic and len(y) < 3:
        raise ValueError("window too short for the grid step")
    n = len(y) if periodic else len(y) - 1
    history: list[float] = []
    if v0 is None:
        sizes = [n]
        while sizes[-1] // 2 >= coarsest:
            sizes.append(sizes[-1] // 2)
        v, yv = None, None
        for m in reversed(sizes[1:]):
            hm = path.length / m
            ym = _grid(path, hm, periodic)
            if v is None:
                vm = np.full(len(ym), -float(H(p)) / lam)
            else:
                vm = _interp(yv, v, ym, path, periodic)
            Vm = np.asarray(path(ym), float)
            level_tol = max(1e-6, rounding_floor(H, vm, lam, hm))
            v, _, _, _ = _solve_level(H, vm, Vm, p, lam, hm, periodic, level_tol, [], max_newton, max_ptc, 0)
            yv = ym
        v = np.full(len(y), -float(H(p)) / lam) if v is None else _interp(yv, v, y, path, periodic)
    else:
        v = np.asarray(v0, float).copy()
    Vy = np.asarray(path(y), float)
    eff_tol = max(tol, rounding_floor(H, v, lam, h))
    v, res, it, method = _solve_level(H, v, Vy, p, lam, h, periodic, eff_tol, history,
                                      max_newton, max_ptc, max_fixed_point)
    if res > eff_tol:
        raise CellSolverError(f"cell solver did not converge (residual {res:.3g} > {eff_tol:.3g})", history)
    return CellSolution(float(p), float(lam), y, h, v, res, it, periodic, method, history, eff_tol)


def _interp(y_old, v_old, y_new, path, periodic):
    if periodic:
        return np.interp(y_new, np.append(y_old, y_old[0] + path.length), np.append(v_old, v_old[0]))
    return np.interp(y_new, y_old, v_old)


def truncation_error_bound(C: float, R: float, y: float = 0.0) -> float:
    """``(C/R) sqrt(y^2 + 1) + C^2/R``: effect of replacing the line by a window of radius ``R/lam``."""
    return C / R * math.sqrt(y * y + 1.0) + C * C / R


def window_radius(H: PiecewiseMonotoneHamiltonian, p: float, mbar: float) -> float:
    """``R = 10 (H(p) + mbar) / max(1, |p|)``."""
    return 10.0 * (float(H(p)) + mbar) / max(1.0, abs(p))


@dataclass
class HbarEstimate:
    value: float
    error_bar: float
    p: float
    lambdas: tuple
    raw: tuple
    truncation: float = 0.0
    lower_bound_ok: bool = True
    residuals: tuple = ()

    def __iter__(self):
        yield self.value
        yield self.error_bar

    def to_dict(self) -> dict:
        return {"p": self.p, "estimate": self.value, "error_bar": self.error_bar,
                "lambdas": list(self.lambdas), "raw": list(self.raw),
                "truncation": self.truncation, "lower_bound_ok": self.lower_bound_ok,
                "residuals": list(self.residuals)}


def _source_path(model, p, lam, H, h, seed):
    """Grid path for one discount: the period for periodic sources, a centred window otherwise."""
    if isinstance(model, PotentialPath):
        return model, 0.0
    if getattr(model, "periodic", False):
        return model.period_path(1.0 / 512), 0.0
    R = window_radius(H, p, model.mbar)
    half = R / lam
    hh = 1.0 / 64 if h is None else h
    path = model.sample_path(seed, window=(-half, half), h=hh)
    return path, truncation_error_bound(float(H(p)) + model.mbar, R)


def default_step(lam: float, period: float = 1.0) -> float:
    """Largest ``period / 2^k`` not exceeding ``min(period / 512, lam / 10)``.

    Power-of-two cell counts make every level of the coarse-to-fine start an
    exact refinement of the one below.
    """
    target = min(period / 512.0, lam / 10.0)
    return period / 2.0 ** math.ceil(math.log2(period / target) - 1e-12)


def estimate_Hbar(H: PiecewiseMonotoneHamiltonian, model, p: float,
                  lambdas: Sequence[float] = DEFAULT_LAMBDAS, h: float | None = None,
                  tol: float = 1e-10, seed: int | None = None, lower_tol: float = 1e-3) -> HbarEstimate:
    """Extrapolate ``-lam v_lam(0, p)`` to ``lam = 0`` from a decreasing discount sequence.

    With ``E_k`` the estimate at ``lam_k`` the value is the linear
    extrapolation ``(lam_{k-1} E_k - lam_k E_{k-1}) / (lam_{k-1} - lam_k)``
    through the last two discounts; the error bar is ``|E_k - E_{k-1}|`` plus
    the window truncation bound for non-periodic sources.
    """
    lambdas = tuple(float(l) for l in lambdas)
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("discounts must be strictly decreasing")
    if lambdas[-1] < 1e-4:
        raise ValueError("discounts below 1e-4 are not supported")
    raw, residuals = [], []
    trunc = 0.0
    for lam in lambdas:
        path, tr = _source_path(model, p, lam, H, h, seed)
        trunc = max(trunc, tr)
        hh = h if h is not None else (default_step(lam, path.length) if path.periodic else path.h)
        sol = solve_discounted(H, path, p, lam, hh, tol)
        raw.append(sol.estimate)
        residuals.append(sol.residual)
    if len(raw) == 1:
        value, spread = raw[0], 0.0
    else:
        l0, l1 = lambdas[-2], lambdas[-1]
        e0, e1 = raw[-2], raw[-1]
        value = (l0 * e1 - l1 * e0) / (l0 - l1)
        spread = abs(e1 - e0)
    return HbarEstimate(float(value), float(spread + trunc), float(p), lambdas, tuple(raw), trunc,
                        bool(min(raw + [value]) >= -lower_tol), tuple(residuals))
