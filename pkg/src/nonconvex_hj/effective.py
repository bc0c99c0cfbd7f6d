"""Effective Hamiltonian ``Hbar`` as a curve of flat and implicit pieces.

An implicit piece is described by a monotone map ``mu -> p(mu)`` (an average
slope at energy level ``mu``); ``Hbar(p)`` is recovered by inverting it with
vectorized bisection.  Flat pieces carry a constant level.  Curves support
shifts, reflection and pointwise minima, which is all the recursion needs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .corrector import (
    CorrectorError,
    branch_momentum_map,
    selection_momentum_map,
    slope_intervals,
    zero_level_endpoints,
    _as_path,
)
from .hamiltonian import (
    HamiltonianError,
    PiecewiseMonotoneHamiltonian,
    carve_left,
    carve_right,
    split_at_zero,
)

CONTINUITY_TOL = 1e-8
_BISECT_ITERS = 64


class EffectiveError(RuntimeError):
    pass


# --- segments -------------------------------------------------------------------

@dataclass(frozen=True)
class FlatSegment:
    level: float
    p_lo: float
    p_hi: float
    provenance: str = ""

    kind = "flat"

    def value(self, p):
        return np.full(np.shape(np.atleast_1d(p)), self.level, dtype=float)

    def end_values(self) -> tuple[float, float]:
        return self.level, self.level

    def restricted(self, lo: float, hi: float) -> "FlatSegment":
        return replace(self, p_lo=max(lo, self.p_lo), p_hi=min(hi, self.p_hi))

    def shifted(self, dp: float, de: float) -> "FlatSegment":
        return replace(self, level=self.level + de, p_lo=self.p_lo + dp, p_hi=self.p_hi + dp)

    def reflected(self) -> "FlatSegment":
        return replace(self, p_lo=-self.p_hi, p_hi=-self.p_lo)


@dataclass(frozen=True)
class ImplicitSegment:
    """``Hbar(p) = mu`` where ``momentum(mu) = p``; ``momentum`` is monotone on the segment.

    ``mu_lo``/``mu_hi`` are the levels at ``p_lo``/``p_hi`` (``inf`` at an
    unbounded end).
    """

    p_lo: float
    p_hi: float
    mu_lo: float
    mu_hi: float
    momentum: Callable
    provenance: str = ""
    label: str = ""

    kind = "implicit"

    @property
    def increasing(self) -> bool:
        return self.mu_hi > self.mu_lo

    def end_values(self) -> tuple[float, float]:
        return self.mu_lo, self.mu_hi

    def _bracket(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = sorted((self.mu_lo, self.mu_hi))
        lo = np.full(p.shape, a)
        if math.isfinite(b):
            return lo, np.full(p.shape, b)
        top = a + 1.0
        sign = 1.0 if self.increasing else -1.0
        for _ in range(200):
            pm = self.momentum(np.array([top]))[0]
            # increasing segment: need momentum(top) >= max p ; decreasing (left tail): <= min p
            if (sign > 0 and pm >= np.max(p)) or (sign < 0 and pm <= np.min(p)):
                break
            top = a + 2.0 * (top - a)
        return lo, np.full(p.shape, top)

    def value(self, p):
        p = np.atleast_1d(np.asarray(p, float))
        if p.size == 0:
            return p.copy()
        lo, hi = self._bracket(p)
        lo0, hi0 = lo, hi
        sgn = 1.0 if self.increasing else -1.0
        f = lambda mu: sgn * (self.momentum(mu) - p)      # increasing in mu
        flo, fhi = f(lo), f(hi)
        done_lo, done_hi = flo >= 0, fhi <= 0
        flo, fhi = np.minimum(flo, 0.0), np.maximum(fhi, 0.0)
        last = np.zeros(p.shape, int)
        for it in range(_BISECT_ITERS):
            den = fhi - flo
            x = np.where(den > 0, hi - fhi * (hi - lo) / np.where(den > 0, den, 1.0), 0.5 * (lo + hi))
            if it % 4 == 3:
                x = 0.5 * (lo + hi)
            x = np.clip(x, lo, hi)
            fx = f(x)
            up = fx < 0
            # Illinois: halve the stale end when the same side is kept twice
            fhi = np.where(up & (last == 1), 0.5 * fhi, fhi)
            flo = np.where(~up & (last == -1), 0.5 * flo, flo)
            lo, flo = np.where(up, x, lo), np.where(up, fx, flo)
            hi, fhi = np.where(up, hi, x), np.where(up, fhi, fx)
            last = np.where(up, 1, -1)
            hit = fx == 0
            lo, hi = np.where(hit, x, lo), np.where(hit, x, hi)
            scale = max(1.0, float(np.max(np.abs(hi))))
            if np.max(hi - lo) <= 1e-14 * scale or np.max(np.minimum(-flo, fhi)) <= 1e-15 * scale:
                break
        out = np.where(-flo <= fhi, lo, hi)
        out = np.where(done_lo, lo0, np.where(done_hi, hi0, out))
        # exact endpoint values at segment joins
        out = np.where(p == self.p_lo, self.mu_lo if math.isfinite(self.mu_lo) else out, out)
        out = np.where(p == self.p_hi, self.mu_hi if math.isfinite(self.mu_hi) else out, out)
        return out

    def restricted(self, lo: float, hi: float) -> "ImplicitSegment":
        nlo, nhi = max(lo, self.p_lo), min(hi, self.p_hi)
        mlo = self.mu_lo if nlo == self.p_lo else float(self.value(nlo)[0])
        mhi = self.mu_hi if nhi == self.p_hi else float(self.value(nhi)[0])
        return replace(self, p_lo=nlo, p_hi=nhi, mu_lo=mlo, mu_hi=mhi)

    def shifted(self, dp: float, de: float) -> "ImplicitSegment":
        m = self.momentum
        return replace(self, p_lo=self.p_lo + dp, p_hi=self.p_hi + dp, mu_lo=self.mu_lo + de,
                       mu_hi=self.mu_hi + de, momentum=lambda mu: m(np.asarray(mu) - de) + dp)

    def reflected(self) -> "ImplicitSegment":
        m = self.momentum
        return replace(self, p_lo=-self.p_hi, p_hi=-self.p_lo, mu_lo=self.mu_hi, mu_hi=self.mu_lo,
                       momentum=lambda mu: -m(mu))


Segment = FlatSegment | ImplicitSegment


# --- curves --------------------------------------------------------------------------

class EffectiveCurve:
    """Ordered, contiguous segments covering the real line."""

    def __init__(self, segments: Sequence[Segment], meta: dict | None = None, merge: bool = True):
        segs = [s for s in segments if s.p_hi > s.p_lo]
        if merge:
            segs = _merge(segs)
        if not segs:
            raise EffectiveError("empty curve")
        if segs[0].p_lo != -math.inf or segs[-1].p_hi != math.inf:
            raise EffectiveError("curve must cover the real line")
        for a, b in zip(segs, segs[1:]):
            if a.p_hi != b.p_lo:
                raise EffectiveError(f"segments not contiguous at {a.p_hi} / {b.p_lo}")
        self.segments = tuple(segs)
        self.meta = dict(meta or {})
        self._starts = np.array([s.p_lo for s in self.segments[1:]])
        self._cache: dict[float, float] = {}

    # evaluation
    def __call__(self, p):
        p_arr = np.atleast_1d(np.asarray(p, float))
        out = np.empty(p_arr.shape)
        todo = np.ones(p_arr.shape, bool)
        for k, x in enumerate(p_arr.flat):
            v = self._cache.get(float(x))
            if v is not None:
                out.flat[k] = v
                todo.flat[k] = False
        idx = np.searchsorted(self._starts, p_arr, side="right")
        for i, seg in enumerate(self.segments):
            m = (idx == i) & todo
            if np.any(m):
                out[m] = seg.value(p_arr[m])
        if len(self._cache) < 200000:
            for x, v in zip(p_arr[todo].flat, out[todo].flat):
                self._cache[float(x)] = float(v)
        return out if np.ndim(p) else float(out[0])

    def covering(self, a: float, b: float) -> Segment:
        """The segment containing ``[a, b]`` (which must lie between breakpoints)."""
        for s in self.segments:
            if s.p_lo <= a and s.p_hi >= b:
                return s
        raise EffectiveError(f"[{a}, {b}] straddles a breakpoint")

    def segment_at(self, p: float) -> Segment:
        return self.segments[int(np.searchsorted(self._starts, p, side="right"))]

    @property
    def breakpoints(self) -> list[float]:
        return [s.p_lo for s in self.segments[1:]]

    def flats(self) -> list[FlatSegment]:
        return [s for s in self.segments if isinstance(s, FlatSegment)]

    def continuity_defect(self) -> float:
        worst = 0.0
        for a, b in zip(self.segments, self.segments[1:]):
            worst = max(worst, abs(a.end_values()[1] - b.end_values()[0]))
        return worst

    def check_continuity(self, tol: float = CONTINUITY_TOL) -> None:
        d = self.continuity_defect()
        if d > tol:
            raise EffectiveError(f"curve discontinuous: jump {d:.3g} > {tol:g}")

    # transforms
    def shifted(self, dp: float, de: float) -> "EffectiveCurve":
        """``p -> Hbar(p - dp) + de``."""
        return EffectiveCurve([s.shifted(dp, de) for s in self.segments], self.meta)

    def reflected(self) -> "EffectiveCurve":
        """``p -> Hbar(-p)``."""
        return EffectiveCurve([s.reflected() for s in reversed(self.segments)], self.meta)

    def tagged(self, prefix: str) -> "EffectiveCurve":
        """Copy whose segment provenances are prefixed with ``prefix``."""
        segs = [replace(s, provenance=f"{prefix} > {s.provenance}") for s in self.segments]
        return EffectiveCurve(segs, self.meta, merge=False)

    def restricted(self, lo: float, hi: float) -> list[Segment]:
        return [s.restricted(lo, hi) for s in self.segments if s.p_hi > lo and s.p_lo < hi]

    # export
    def manifest(self) -> list[dict]:
        out = []
        for s in self.segments:
            d = {"kind": s.kind, "p_lo": s.p_lo, "p_hi": s.p_hi, "provenance": s.provenance}
            if isinstance(s, FlatSegment):
                d["level"] = s.level
            else:
                d.update(mu_lo=s.mu_lo, mu_hi=s.mu_hi, label=s.label)
            out.append(d)
        return out

    def rows(self, grid) -> list[tuple[float, float, str, str]]:
        grid = np.asarray(grid, float)
        vals = self(grid)
        out = []
        for p, v in zip(grid, vals):
            s = self.segment_at(float(p))
            out.append((float(p), float(v), s.kind, s.provenance))
        return out

    def __repr__(self) -> str:
        parts = []
        for s in self.segments:
            if isinstance(s, FlatSegment):
                parts.append(f"flat {s.level:g} on [{s.p_lo:.6g}, {s.p_hi:.6g}]")
            else:
                parts.append(f"{s.label or 'implicit'} on [{s.p_lo:.6g}, {s.p_hi:.6g}]")
        return "EffectiveCurve(" + " | ".join(parts) + ")"


def _same_map(a: ImplicitSegment, b: ImplicitSegment) -> bool:
    return a.momentum is b.momentum


def _merge(segs: list[Segment]) -> list[Segment]:
    out: list[Segment] = []
    for s in segs:
        if out:
            prev = out[-1]
            if isinstance(prev, FlatSegment) and isinstance(s, FlatSegment) and abs(prev.level - s.level) <= 1e-12:
                out[-1] = replace(prev, p_hi=s.p_hi)
                continue
            if isinstance(prev, ImplicitSegment) and isinstance(s, ImplicitSegment) and _same_map(prev, s):
                out[-1] = replace(prev, p_hi=s.p_hi, mu_hi=s.mu_hi)
                continue
        out.append(s)
    return out


# --- pointwise minimum ----------------------------------------------------------------

def _probe_points(a: float, b: float, n: int = 65) -> np.ndarray:
    if math.isfinite(a) and math.isfinite(b):
        return np.linspace(a, b, n)
    steps = 1e-3 * 2.0 ** np.arange(0, 24)
    if math.isfinite(a):
        return np.concatenate([[a], a + steps])
    if math.isfinite(b):
        return np.concatenate([b - steps[::-1], [b]])
    return np.concatenate([-steps[::-1], [0.0], steps])


def min_curves(curves: Sequence[EffectiveCurve], lo: float = -math.inf, hi: float = math.inf,
               tie_tol: float = 1e-12) -> list[Segment]:
    """Segments of ``min_k curves[k]`` on ``[lo, hi]``.

    Crossings are located by sampling each elementary interval (between the
    union of breakpoints) and refining sign changes with ``brentq``.  Near-ties
    go to the curve listed first.
    """
    bps = sorted({lo, hi} | {b for c in curves for b in c.breakpoints if lo < b < hi})
    pieces: list[Segment] = []
    for a, b in zip(bps[:-1], bps[1:]):
        t = _probe_points(a, b)
        segs = [c.covering(a, b) for c in curves]
        vals = np.array([s.value(t) for s in segs])
        best = np.min(vals, axis=0)
        winner = np.argmax(vals <= best + tie_tol, axis=0)
        cuts = [a]
        owners = [int(winner[0])]
        for k in range(1, len(t)):
            w0, w1 = owners[-1], int(winner[k])
            if w1 == w0:
                continue
            s0, s1 = segs[w0], segs[w1]
            g = lambda x: float(s0.value(x)[0] - s1.value(x)[0])
            x0, x1 = t[k - 1], t[k]
            g0, g1 = g(x0), g(x1)
            if g0 * g1 < 0:
                x = brentq(g, x0, x1, xtol=1e-14, rtol=4 * np.finfo(float).eps)
            else:
                x = x0 if abs(g0) <= abs(g1) else x1
            x = min(max(x, cuts[-1]), b)
            cuts.append(x)
            owners.append(w1)
        cuts.append(b)
        for (x0, x1), w in zip(zip(cuts[:-1], cuts[1:]), owners):
            if x1 > x0:
                pieces.append(segs[w].restricted(x0, x1))
    return pieces


def _curve(segments: Sequence[Segment], meta: dict, check: bool = True, tol: float = CONTINUITY_TOL) -> EffectiveCurve:
    c = EffectiveCurve(segments, meta)
    if check:
        c.check_continuity(tol)
    return c


def glue_minimum(curve_plus: EffectiveCurve, curve_minus: EffectiveCurve) -> EffectiveCurve:
    """``Hbar = min(Hbar+, Hbar-)`` for the two halves of :func:`split_at_zero`."""
    return _curve(min_curves([curve_minus, curve_plus]), {"construction": "glue"})


def combine_left(curve1: EffectiveCurve, curve2: EffectiveCurve) -> EffectiveCurve:
    """``Hbar = min(Hbar_1, Hbar_2)`` for the pieces of :func:`carve_left`."""
    return _curve(min_curves([curve1, curve2]), {"construction": "combine_left"})


def combine_right(curve1: EffectiveCurve, curve2: EffectiveCurve, clamp_level: float,
                  p_right: float) -> EffectiveCurve:
    """Three-zone assembly for the pieces of :func:`carve_right`.

    ``Hbar_1`` for ``p <= 0``, ``min(Hbar_1, Hbar_2, clamp_level)`` on
    ``[0, p_right]`` and ``Hbar_2`` for ``p >= p_right``.  When the clamp level
    is not reached the clamp zone is simply empty.
    """
    clamp = EffectiveCurve([FlatSegment(clamp_level, -math.inf, math.inf, "clamp M_k - mbar")])
    segs = curve1.restricted(-math.inf, 0.0)
    segs += min_curves([curve1, curve2, clamp], 0.0, p_right)
    segs += curve2.restricted(p_right, math.inf)
    c = EffectiveCurve(segs, {"construction": "combine_right", "clamp": clamp_level})
    d = c.continuity_defect()
    if d > 1e-6:
        raise EffectiveError(f"combine_right: discontinuity {d:.3g} at a zone boundary")
    return c


# --- direct formulas ---------------------------------------------------------------------

def _mbar(model) -> float:
    return float(model.mbar)


def _expect_branch(H, model, j, mu, side="right") -> float:
    return float(branch_momentum_map(H, model, j, side)(np.array([mu]))[0])


def effective_quasiconvex(H: PiecewiseMonotoneHamiltonian, model) -> EffectiveCurve:
    """``L = Lt = 0``: flat 0 on ``[q_{-1}, q_0]`` and one implicit branch on each side."""
    if H.L != 0 or H.L_left != 0:
        raise EffectiveError("quasiconvex formula needs L = Lt = 0")
    right = branch_momentum_map(H, model, 1)
    left = branch_momentum_map(H, model, 1, "left")
    q0 = float(right(np.array([0.0]))[0])
    qm1 = float(left(np.array([0.0]))[0])
    segs = [ImplicitSegment(-math.inf, qm1, math.inf, 0.0, left, "quasiconvex: left branch", "Psi"),
            FlatSegment(0.0, qm1, q0, "quasiconvex: zero level"),
            ImplicitSegment(q0, math.inf, 0.0, math.inf, right, "quasiconvex: right branch", "psi_1")]
    return _curve(segs, {"construction": "quasiconvex", "q_-1": qm1, "q_0": q0})


def small_oscillation_bound(H: PiecewiseMonotoneHamiltonian) -> float:
    """``min_k min(M_k - m_k, M_k - m_{k+1})`` with ``m_{L+1} = 0``."""
    cv = H.critical_values()
    m = list(cv.m) + [0.0]
    return min(min(cv.M[k] - m[k], cv.M[k] - m[k + 1]) for k in range(len(cv.M)))


def small_oscillation_breakpoints(H: PiecewiseMonotoneHamiltonian, model) -> dict:
    """``p^+-_k``, ``q_0``, ``q_{-1}`` from the closed-form expectations."""
    cv = H.critical_values()
    mbar = _mbar(model)
    out = {}
    for k in range(1, H.L + 1):
        mk, Mk = cv.m[k - 1], cv.M[k - 1]
        out[f"p+{2 * k - 1}"] = _expect_branch(H, model, 2 * k - 1, mk)
        out[f"p-{2 * k - 1}"] = _expect_branch(H, model, 2 * k, mk)
        out[f"p+{2 * k}"] = _expect_branch(H, model, 2 * k, Mk - mbar)
        out[f"p-{2 * k}"] = _expect_branch(H, model, 2 * k + 1, Mk - mbar)
    out["q0"] = _expect_branch(H, model, 2 * H.L + 1, 0.0)
    out["q-1"] = _expect_branch(H, model, 1, 0.0, "left")
    return out


def effective_small_osc(H: PiecewiseMonotoneHamiltonian, model) -> EffectiveCurve:
    """Alternating flats at ``m_k`` and ``M_k - mbar`` joined by branch pieces (needs ``Lt = 0``)."""
    if H.L_left != 0:
        raise EffectiveError("small-oscillation formula needs Lt = 0")
    if H.L == 0:
        return effective_quasiconvex(H, model)
    mbar = _mbar(model)
    if not mbar < small_oscillation_bound(H):
        raise EffectiveError("oscillation too large for the small-oscillation formula")
    cv = H.critical_values()
    bp = small_oscillation_breakpoints(H, model)
    L = H.L
    segs: list[Segment] = []
    left = branch_momentum_map(H, model, 1, "left")
    segs.append(ImplicitSegment(-math.inf, bp["q-1"], math.inf, 0.0, left, "left branch", "Psi"))
    segs.append(FlatSegment(0.0, bp["q-1"], bp["q0"], "zero level"))
    lower = (bp["q0"], 0.0)
    for k in range(L, 0, -1):
        mk, Mk = cv.m[k - 1], cv.M[k - 1]
        up = branch_momentum_map(H, model, 2 * k + 1)
        segs.append(ImplicitSegment(lower[0], bp[f"p-{2 * k}"], lower[1], Mk - mbar, up,
                                    f"branch psi_{2 * k + 1}", f"psi_{2 * k + 1}"))
        segs.append(FlatSegment(Mk - mbar, bp[f"p-{2 * k}"], bp[f"p+{2 * k}"], f"M_{k} - mbar"))
        down = branch_momentum_map(H, model, 2 * k)
        segs.append(ImplicitSegment(bp[f"p+{2 * k}"], bp[f"p-{2 * k - 1}"], Mk - mbar, mk, down,
                                    f"branch psi_{2 * k}", f"psi_{2 * k}"))
        segs.append(FlatSegment(mk, bp[f"p-{2 * k - 1}"], bp[f"p+{2 * k - 1}"], f"m_{k}"))
        lower = (bp[f"p+{2 * k - 1}"], mk)
    segs.append(ImplicitSegment(lower[0], math.inf, lower[1], math.inf, branch_momentum_map(H, model, 1),
                                "branch psi_1", "psi_1"))
    return _curve(segs, {"construction": "small_osc", "breakpoints": bp})


def invert_branch_equation(H: PiecewiseMonotoneHamiltonian, j: int, model, p: float,
                           side: str = "right") -> float:
    """Level ``mu`` with ``E[psi_j(mu - V(0))] = p`` (monotone bisection)."""
    br = H.branch(j, side)
    lo_s, hi_s = br.value_range
    mbar = _mbar(model)
    # mu - V ranges over [mu, mu + mbar]; both ends must stay in the branch's value range
    mu_lo, mu_hi = max(0.0, lo_s), hi_s - mbar
    if not mu_lo <= mu_hi:
        raise ValueError(f"branch {j} has no level with its whole range available")
    f = branch_momentum_map(H, model, j, side)
    g = lambda mu: float(f(np.array([mu]))[0]) - p
    if not math.isfinite(mu_hi):
        mu_hi = mu_lo + 1.0
        while g(mu_lo) * g(mu_hi) > 0 and mu_hi < 1e12:
            mu_hi = mu_lo + 2.0 * (mu_hi - mu_lo)
    g_lo, g_hi = g(mu_lo), g(mu_hi)
    if abs(g_lo) <= 1e-12:
        return mu_lo
    if abs(g_hi) <= 1e-12:
        return mu_hi
    if g_lo * g_hi > 0:
        raise ValueError(f"p={p} outside the invertible range of branch {j}")
    return brentq(g, mu_lo, mu_hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


# --- large oscillation -----------------------------------------------------------------

def critical_levels(H: PiecewiseMonotoneHamiltonian, model) -> list[float]:
    """Levels where ``mu - c`` meets an extremum value of ``V`` for some critical value ``c``."""
    path = _as_path(model)
    cv = H.critical_values()
    vals = {v for _, v, _ in path.extrema()}
    top = max(cv.M)
    cand = sorted(c + v for c in list(cv.m) + list(cv.M) for v in vals
                  if 0.0 < c + v <= top + 1e-12)
    # Merge near-duplicates without rounding: level sets near an extremum of V
    # grow like a square root, so shifting a level by 1e-13 moves slopes by ~1e-7.
    out: list[float] = []
    for mu in cand:
        if not out or mu - out[-1] > 1e-12 * max(1.0, abs(mu)):
            out.append(mu)
    return out


def effective_large_osc(H: PiecewiseMonotoneHamiltonian, model, flat_tol: float = 1e-9) -> EffectiveCurve:
    """``mbar >= max (M_i - m_j)``: quasiconvex curve assembled from the level sets.

    Between consecutive critical levels the selection pattern is fixed and the
    average slope is an exact monotone function of ``mu``; at a critical level
    the slope interval may open into a flat.
    """
    if H.L_left != 0:
        raise EffectiveError("large-oscillation construction needs Lt = 0")
    cv = H.critical_values()
    mbar = _mbar(model)
    if H.L == 0:
        return effective_quasiconvex(H, model)
    if mbar < cv.gap - 1e-12:
        raise EffectiveError("oscillation below the gap max(M_i - m_j)")
    crit = critical_levels(H, model)
    M_max = max(cv.M)
    levels = [0.0] + [c for c in crit if c < M_max - 1e-12] + [M_max]
    qm1, _ = zero_level_endpoints(H, model)
    left = branch_momentum_map(H, model, 1, "left")
    segs: list[Segment] = [ImplicitSegment(-math.inf, qm1, math.inf, 0.0, left, "left branch", "Psi")]
    iv0 = _level_interval(H, model, 0.0)
    q0 = iv0[0]
    cur_p, cur_mu = qm1, 0.0
    segs.append(FlatSegment(0.0, qm1, iv0[1], "zero level"))
    cur_p = iv0[1]
    for a, b in zip(levels[:-1], levels[1:]):
        mref = 0.5 * (a + b)
        fmap = selection_momentum_map(H, model, mref)
        pa, pb = (float(x) for x in fmap(np.array([a, b])))
        if abs(pa - cur_p) > 1e-7:
            raise EffectiveError(f"level-set staircase gap {abs(pa - cur_p):.3g} at mu={a}")
        if pb < pa:
            raise EffectiveError(f"average slope not increasing on ({a}, {b})")
        segs.append(ImplicitSegment(cur_p, pb, a, b, fmap, "level-set sweep", f"selection({a:.6g},{b:.6g})"))
        cur_p = pb
        if b < M_max:
            lo_b, hi_b = _level_interval(H, model, b)
            if abs(lo_b - cur_p) > 1e-7:
                raise EffectiveError(f"level-set staircase gap {abs(lo_b - cur_p):.3g} at mu={b}")
            if hi_b - lo_b > flat_tol:
                segs.append(FlatSegment(b, cur_p, hi_b, f"flat at critical level {b:.6g}"))
                cur_p = hi_b
    tail = branch_momentum_map(H, model, 1)
    segs.append(ImplicitSegment(cur_p, math.inf, M_max, math.inf, tail, "branch psi_1", "psi_1"))
    return _curve(segs, {"construction": "large_osc", "q_-1": qm1, "q_0": q0, "critical_levels": crit},
                  tol=1e-7)


def _level_interval(H, model, mu) -> tuple[float, float]:
    """Hull of the slope intervals at level ``mu``."""
    ivs = slope_intervals(H, model, mu)
    return min(s.lo for s in ivs), max(s.hi for s in ivs)


@dataclass
class SweepResult:
    mus: np.ndarray
    intervals: list[tuple[float, float]]
    q0: float
    p_top: float
    max_gap: float
    disjoint: bool


def sweep_intervals(H: PiecewiseMonotoneHamiltonian, model, mu_max: float | None = None,
                    gap_tol: float = 1e-3, n0: int = 64, max_points: int = 20000) -> SweepResult:
    """Adaptive sweep of slope intervals over ``[0, mu_max]`` (default ``M_max + mbar + 1``).

    Starting from ``n0`` equispaced levels plus the critical levels, the grid is
    bisected wherever consecutive intervals leave a gap larger than ``gap_tol``.
    """
    cv = H.critical_values()
    mbar = _mbar(model)
    if mu_max is None:
        mu_max = (max(cv.M) if cv.M else 0.0) + mbar + 1.0
    crit = critical_levels(H, model) if cv.M else []
    mus = sorted(set(np.linspace(0.0, mu_max, n0).tolist()) | set(crit))
    ivs = {m: _level_interval(H, model, m) for m in mus}
    while True:
        mus = sorted(ivs)
        new = []
        for a, b in zip(mus[:-1], mus[1:]):
            if ivs[b][0] - ivs[a][1] > gap_tol and b - a > 1e-12:
                new.append(0.5 * (a + b))
        if not new:
            break
        if len(ivs) + len(new) > max_points:
            raise EffectiveError("sweep refinement did not close the gaps")
        for m in new:
            ivs[m] = _level_interval(H, model, m)
    mus = sorted(ivs)
    seq = [ivs[m] for m in mus]
    gaps = [seq[k + 1][0] - seq[k][1] for k in range(len(seq) - 1)]
    disjoint = all(g > 0 for g in gaps)
    p_top = _expect_branch(H, model, 1, mu_max)
    return SweepResult(np.array(mus), seq, seq[0][0], p_top, max(gaps) if gaps else 0.0, disjoint)


# --- recursion --------------------------------------------------------------------------------

def _indices(H):
    cv = H.critical_values()
    return int(np.argmax(cv.M)) + 1, int(np.argmin(cv.m)) + 1, cv


def _normalized_recurse(Hc: PiecewiseMonotoneHamiltonian, model, depth: int, limit: int,
                        parent_bumps: int, tag: str) -> EffectiveCurve:
    Hn, p_star, e_star = Hc.normalized()
    if Hn.bump_count >= parent_bumps:
        raise EffectiveError("surgery did not reduce the number of bumps")
    return _compute(Hn, model, depth + 1, limit).shifted(p_star, e_star).tagged(tag)


def _half(H: PiecewiseMonotoneHamiltonian, model, depth: int, limit: int) -> EffectiveCurve:
    """Effective curve of a Hamiltonian without bumps left of 0."""
    if H.L == 0:
        return effective_quasiconvex(H, model)
    mbar = _mbar(model)
    k, l, cv = _indices(H)
    if mbar >= cv.gap:
        return effective_large_osc(H, model)
    if l > k:
        tags = {1: "carve_left H1", 2: "carve_left H2"}
        H1, H2 = carve_left(H, k, l, mbar)
        c1 = _normalized_recurse(H1, model, depth, limit, H.bump_count, tags[1])
        c2 = _normalized_recurse(H2, model, depth, limit, H.bump_count, tags[2])
        return combine_left(c1, c2)
    tags = {1: "carve_right H1", 2: "carve_right H2"}
    H1, H2 = carve_right(H, k, l, mbar)
    c1 = _normalized_recurse(H1, model, depth, limit, H.bump_count, tags[1])
    c2 = _normalized_recurse(H2, model, depth, limit, H.bump_count, tags[2])
    p_right = H.right_breakpoints[2 * l - 2]
    return combine_right(c1, c2, cv.M[k - 1] - mbar, p_right)


def _compute(H: PiecewiseMonotoneHamiltonian, model, depth: int, limit: int) -> EffectiveCurve:
    if depth > limit:
        raise EffectiveError(f"recursion depth {depth} exceeds {limit}")
    if H.K == 0:
        return effective_quasiconvex(H, model)
    if H.L_left == 0:
        return _half(H, model, depth, limit)
    Hp, Hm = split_at_zero(H)
    cp = _half(Hp, model, depth, limit).tagged("split H+")
    cm = _half(Hm.reflected(), model.reflected(), depth, limit).reflected().tagged("split H-")
    return glue_minimum(cp, cm)


def compute_effective(H: PiecewiseMonotoneHamiltonian, model) -> EffectiveCurve:
    """``Hbar`` for a normalized Hamiltonian by induction on the number of bumps."""
    H.check_normalized()
    limit = 2 * (H.L + H.L_left) + 2
    c = _compute(H, model, 0, limit)
    c.meta.setdefault("construction", "recursion")
    return c


def effective_hamiltonian(H: PiecewiseMonotoneHamiltonian, model) -> EffectiveCurve:
    """``Hbar`` for any admissible ``H``: normalize by a shift, recurse, shift back.

    With ``H0(q) = H(q + p*) - H(p*)`` the effective Hamiltonians satisfy
    ``Hbar(p) = Hbar0(p - p*) + H(p*)``.
    """
    H0, p_star, e_star = H.normalized()
    c = compute_effective(H0, model)
    if p_star == 0.0 and e_star == 0.0:
        return c
    out = c.shifted(p_star, e_star)
    out.meta.update(momentum_shift=p_star, energy_shift=e_star)
    return out
