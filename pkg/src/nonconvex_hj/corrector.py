"""Admissible slope fields for the metric problem ``H(u') + V(y) = mu``.

A slope field is the derivative of a Lipschitz solution.  On every interval of
the ``(V, mu)`` decomposition (the line cut where ``mu - V`` crosses a critical
value of ``H``) an admissible field follows one right branch
``psi_j(mu - V)``; at the cuts a jump is allowed when it passes the viscosity
test of :func:`junction_admissible`.

Periodic potentials are handled one period at a time with cyclic junction
constraints; aperiodic samples use a long window with free ends.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from scipy.optimize import brentq

from .hamiltonian import PiecewiseMonotoneHamiltonian
from .potential import (
    PotentialModel,
    PotentialPath,
    gauss_legendre,
    gauss_legendre_batch,
    monotone_crossings,
)

JUNCTION_TOL = 1e-9
MASS_TOL = 1e-8


class CorrectorError(RuntimeError):
    pass


class OutsideAdmissibleRange(ValueError):
    """``mu`` lies outside the range where the decomposition is defined."""


# --- elementary checks ---------------------------------------------------------

def junction_admissible(H: PiecewiseMonotoneHamiltonian, V_at_a: float, mu: float,
                        f_left: float, f_right: float, tol: float = JUNCTION_TOL,
                        mode: str = "solution") -> bool:
    """Viscosity test for a jump of ``u'`` from ``f_left`` to ``f_right`` at ``a``.

    A downward jump makes ``D+u(a) = [f_right, f_left]`` and needs the
    subsolution inequality ``max H <= mu - V(a)`` on it.  An upward jump makes
    ``D-u(a) = [f_left, f_right]`` and needs ``min H >= mu - V(a)``; in
    ``mode="subsolution"`` upward jumps are always accepted.
    """
    s = mu - V_at_a
    if f_left == f_right:
        return True
    if f_left > f_right:
        return bool(H.range_max(f_right, f_left) <= s + tol)
    if mode == "subsolution":
        return True
    return bool(H.range_min(f_left, f_right) >= s - tol)


def admissible_range(H: PiecewiseMonotoneHamiltonian, mbar: float) -> tuple[float, float]:
    """Open interval ``(lo, hi)`` such that the level set is ``[0, inf) n (lo, hi)``; empty when ``L = 0``."""
    cv = H.critical_values()
    if not cv.M:
        return (0.0, 0.0)
    return (min(cv.m) - mbar, max(cv.M))


def in_admissible_range(H: PiecewiseMonotoneHamiltonian, mbar: float, mu: float) -> bool:
    lo, hi = admissible_range(H, mbar)
    return mu >= 0.0 and lo < mu < hi


def _as_path(source, h: float = 1e-3) -> PotentialPath:
    if isinstance(source, PotentialPath):
        return source
    if hasattr(source, "period_path"):
        return source.period_path(h)
    return source.sample_path(h=h)


# --- decomposition -------------------------------------------------------------

@dataclass(frozen=True)
class Junction:
    y: float
    level: float          # critical value hit by mu - V(y)
    tag: str              # "m1", "M2", ...
    tangent: bool         # mu - V only touches the critical value at an extremum of V
    direction: int        # +1 if mu - V increases through the level, -1 if it decreases, 0 tangent


@dataclass
class Decomposition:
    """Cuts of one period (or a window) where ``mu - V`` meets a critical value.

    Interval ``i`` starts at ``start_junction[i]`` (``None`` at a window's left
    end or when a period has no cuts).  For periodic paths the last interval
    wraps past ``y_hi`` and closes onto ``start_junction[0]``.
    """

    H: PiecewiseMonotoneHamiltonian
    path: PotentialPath
    mu: float
    junctions: tuple[Junction, ...]
    intervals: list[tuple[float, float]]
    start_junction: list[Junction | None]
    s_mid: np.ndarray
    feasible: list[tuple[int, ...]]
    _weights: np.ndarray | None = None

    @property
    def periodic(self) -> bool:
        return self.path.periodic

    @property
    def n(self) -> int:
        return len(self.intervals)

    @property
    def n_branches(self) -> int:
        return 2 * self.H.L + 1

    @property
    def length(self) -> float:
        return self.path.length

    def branch_values(self, j: int, y) -> np.ndarray:
        return self.H.psi(j, self.mu - self.path(y))

    def weights(self) -> np.ndarray:
        """``w[i, j-1] = int_{I_i} psi_j(mu - V)`` (``nan`` where infeasible)."""
        if self._weights is None:
            w = np.full((self.n, self.n_branches), np.nan)
            a = np.array([iv[0] for iv in self.intervals])
            b = np.array([iv[1] for iv in self.intervals])
            for j in range(1, self.n_branches + 1):
                idx = [i for i in range(self.n) if j in self.feasible[i]]
                if idx:
                    br = self.H.branch(j)
                    fn = lambda y, br=br: br.inverse(self.mu - self.path(y))
                    w[idx, j - 1] = gauss_legendre_batch(fn, a[idx], b[idx])
            self._weights = w
        return self._weights

    def transition_ok(self, i_next: int, j_prev: int, j_next: int) -> bool:
        """May a field on branch ``j_prev`` continue on ``j_next`` into interval ``i_next``?"""
        J = self.start_junction[i_next]
        if J is None:
            return j_prev == j_next
        fl = float(self.H.psi(j_prev, J.level))
        fr = float(self.H.psi(j_next, J.level))
        return junction_admissible(self.H, self.mu - J.level, self.mu, fl, fr)

    def successor(self, i: int) -> int | None:
        if i + 1 < self.n:
            return i + 1
        return 0 if self.periodic else None


def _critical_levels(H: PiecewiseMonotoneHamiltonian) -> list[tuple[float, str]]:
    cv = H.critical_values()
    out = [(v, f"m{k + 1}") for k, v in enumerate(cv.m)]
    out += [(v, f"M{k + 1}") for k, v in enumerate(cv.M)]
    return out


def _feasible_for(H: PiecewiseMonotoneHamiltonian, s: float) -> tuple[int, ...]:
    crit = sorted({0.0} | {v for v, _ in _critical_levels(H)})
    lo = max(c for c in crit if c <= s) if s >= 0 else -math.inf
    above = [c for c in crit if c >= s]
    hi = min(above) if above else math.inf
    out = []
    for j in range(1, 2 * H.L + 2):
        blo, bhi = H.branch(j).value_range
        if blo <= lo + 1e-12 and hi <= bhi + 1e-12:
            out.append(j)
    return tuple(out)


def decompose(H: PiecewiseMonotoneHamiltonian, source, mu: float, check: bool = True) -> Decomposition:
    """Decomposition of one period (periodic sources) or of a sampled window.

    With ``check=True`` ``mu`` must lie in the admissible range
    ``[0, inf) n (m_min - mbar, M_max)``.  Levels that graze an extremum of
    ``V`` within ``1e-8`` are cut exactly at the extremum (a tangent cut).
    """
    path = _as_path(source)
    mbar = path.mbar if path.mbar > 0 else -float(np.min(path.values))
    if check and not in_admissible_range(H, mbar, mu):
        lo, hi = admissible_range(H, mbar)
        raise OutsideAdmissibleRange(f"mu={mu} outside [0,inf) n ({lo}, {hi})")
    ext = path.extrema()
    cuts: list[Junction] = []
    for level, tag in _critical_levels(H):
        c = mu - level                   # V(y) = c  <=>  mu - V(y) = level
        if c > 1e-8 or c < -mbar - 1e-8:
            continue
        xs, tangents = monotone_crossings(path, c, ext)
        for y in xs:
            dv = float(path(np.array(y + 1e-7))) - float(path(np.array(y - 1e-7)))
            cuts.append(Junction(float(y), level, tag, False, -1 if dv > 0 else 1))
        for y in tangents:
            cuts.append(Junction(float(y), level, tag, True, 0))
    cuts.sort(key=lambda J: J.y)
    ys = [J.y for J in cuts]
    if path.periodic:
        if cuts:
            intervals = [(ys[i], ys[i + 1]) for i in range(len(ys) - 1)] + [(ys[-1], ys[0] + path.length)]
            start = list(cuts)
        else:
            intervals = [(path.y_lo, path.y_hi)]
            start = [None]
    else:
        edges = [path.y_lo] + ys + [path.y_hi]
        intervals = list(zip(edges[:-1], edges[1:]))
        start = [None] + list(cuts)
    mids = np.array([0.5 * (a + b) for a, b in intervals])
    s_mid = mu - path(mids)
    feasible = [_feasible_for(H, float(s)) for s in np.atleast_1d(s_mid)]
    return Decomposition(H, path, mu, tuple(cuts), intervals, start, np.atleast_1d(s_mid), feasible)


# --- slope fields ----------------------------------------------------------------

@dataclass
class Segment:
    a: float
    b: float
    fn: Callable
    label: object = None      # branch index, "Psi", "mix", ...


@dataclass
class SlopeField:
    """Piecewise-defined slope field over one period (or a window)."""

    path: PotentialPath
    mu: float
    segments: list[Segment]
    provenance: str = "selection"
    decomposition: Decomposition | None = None
    assignment: tuple[int, ...] | None = None

    @property
    def periodic(self) -> bool:
        return self.path.periodic

    @property
    def origin(self) -> float:
        return self.segments[0].a

    @property
    def end(self) -> float:
        return self.segments[-1].b

    def _wrap(self, y):
        y = np.asarray(y, float)
        if self.periodic:
            return self.origin + np.mod(y - self.origin, self.path.length)
        return y

    def __call__(self, y):
        y = self._wrap(y)
        starts = np.array([s.a for s in self.segments])
        idx = np.clip(np.searchsorted(starts, y, side="right") - 1, 0, len(self.segments) - 1)
        out = np.empty(y.shape)
        for k, seg in enumerate(self.segments):
            m = idx == k
            if np.any(m):
                out[m] = seg.fn(y[m])
        return out if out.ndim else float(out)

    def integral(self) -> float:
        return float(sum(gauss_legendre(s.fn, s.a, s.b) for s in self.segments))

    def mean(self) -> float:
        return self.integral() / (self.end - self.origin)

    def junction_points(self) -> list[tuple[float, float, float]]:
        """``(y, f(y-), f(y+))`` at every segment boundary (including the periodic wrap)."""
        out = []
        segs = self.segments
        for s0, s1 in zip(segs[:-1], segs[1:]):
            out.append((s1.a, float(s0.fn(np.array(s1.a))), float(s1.fn(np.array(s1.a)))))
        if self.periodic:
            y = segs[0].a
            out.insert(0, (y, float(segs[-1].fn(np.array(segs[-1].b))), float(segs[0].fn(np.array(y)))))
        return out

    def to_csv(self, fname, n: int = 2001) -> None:
        y = np.linspace(self.origin, self.end, n, endpoint=not self.periodic)
        np.savetxt(fname, np.column_stack([y, self(y)]), delimiter=",", header="y,f", comments="")


def _branch_fn(H, path, mu, j):
    br = H.branch(j)
    return lambda y: br.inverse(mu - path(y))


def _psi_left_fn(H, path, mu):
    br = H.branch(1, "left")
    return lambda y: br.inverse(mu - path(y))


@dataclass
class AdmissibleSelection:
    decomposition: Decomposition
    branches: tuple[int, ...]
    kind: str = "sup"

    @property
    def mu(self) -> float:
        return self.decomposition.mu

    def expected(self) -> float:
        w = self.decomposition.weights()
        return float(sum(w[i, j - 1] for i, j in enumerate(self.branches)) / self.decomposition.length)

    def field(self) -> SlopeField:
        dec = self.decomposition
        segs = [Segment(a, b, _branch_fn(dec.H, dec.path, dec.mu, j), j)
                for (a, b), j in zip(dec.intervals, self.branches)]
        return SlopeField(dec.path, dec.mu, segs, f"{self.kind}-selection", dec, self.branches)


# --- verification ----------------------------------------------------------------

@dataclass
class JunctionRecord:
    y: float
    f_left: float
    f_right: float
    level: float
    kind: str
    admissible: bool


@dataclass
class VerificationReport:
    passed: bool
    residual: float
    junctions: list[JunctionRecord]
    mode: str

    @property
    def failures(self) -> list[JunctionRecord]:
        return [j for j in self.junctions if not j.admissible]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "residual": self.residual, "mode": self.mode,
                "junctions": [vars(j) for j in self.junctions]}


def verify_metric_solution(field_: SlopeField, H: PiecewiseMonotoneHamiltonian, path: PotentialPath | None = None,
                           mu: float | None = None, tol: float = 1e-8, mode: str = "solution",
                           delta: float = 0.0, boundary_margin: float = 0.0) -> VerificationReport:
    """Residual of ``H(f) + V - mu`` on every segment and the viscosity test at every jump.

    ``mode="subsolution"`` checks ``H(f) + V <= mu + delta`` and only downward jumps.
    """
    path = field_.path if path is None else path
    mu = field_.mu if mu is None else mu
    res = 0.0
    nodes = 0.5 * (np.polynomial.legendre.leggauss(64)[0] + 1.0)
    uni = np.linspace(0.0, 1.0, 33)[1:-1]
    t = np.concatenate([nodes, uni])
    for seg in field_.segments:
        y = seg.a + (seg.b - seg.a) * t
        r = H(seg.fn(y)) + path(y) - mu - delta
        res = max(res, float(np.max(r)) if mode == "subsolution" else float(np.max(np.abs(r))))
    records = []
    lo, hi = field_.origin + boundary_margin, field_.end - boundary_margin
    for y, fl, fr in field_.junction_points():
        if not field_.periodic and not (lo <= y <= hi):
            continue
        v = float(path(np.array(y)))
        ok = junction_admissible(H, v, mu + delta, fl, fr, mode=mode)
        kind = "none" if fl == fr else ("down" if fl > fr else "up")
        records.append(JunctionRecord(float(y), fl, fr, mu + delta - v, kind, ok))
    passed = res <= tol and all(r.admissible for r in records)
    return VerificationReport(passed, res, records, mode)


# --- sup / inf selections ----------------------------------------------------------

def _valid_periodic(dec: Decomposition) -> list[set[int]]:
    """Nodes that lie on some one-period cyclic assignment."""
    n = dec.n
    valid = [set() for _ in range(n)]
    if dec.start_junction[0] is None:        # no cuts: any constant feasible branch
        valid[0] = set(dec.feasible[0])
        return valid
    for j0 in dec.feasible[0]:
        fwd = [set() for _ in range(n)]
        fwd[0] = {j0}
        for i in range(1, n):
            fwd[i] = {j for j in dec.feasible[i] if any(dec.transition_ok(i, jp, j) for jp in fwd[i - 1])}
        bwd = [set() for _ in range(n)]
        bwd[n - 1] = {j for j in dec.feasible[n - 1] if dec.transition_ok(0, j, j0)}
        for i in range(n - 2, -1, -1):
            bwd[i] = {j for j in dec.feasible[i] if any(dec.transition_ok(i + 1, j, jn) for jn in bwd[i + 1])}
        if j0 not in bwd[0]:
            continue
        for i in range(n):
            valid[i] |= fwd[i] & bwd[i]
    return valid


def _valid_window(dec: Decomposition) -> list[set[int]]:
    n = dec.n
    fwd = [set() for _ in range(n)]
    fwd[0] = set(dec.feasible[0])
    for i in range(1, n):
        fwd[i] = {j for j in dec.feasible[i] if any(dec.transition_ok(i, jp, j) for jp in fwd[i - 1])}
    bwd = [set() for _ in range(n)]
    bwd[n - 1] = set(dec.feasible[n - 1])
    for i in range(n - 2, -1, -1):
        bwd[i] = {j for j in dec.feasible[i] if any(dec.transition_ok(i + 1, j, jn) for jn in bwd[i + 1])}
    return [f & b for f, b in zip(fwd, bwd)]


def valid_nodes(dec: Decomposition) -> list[set[int]]:
    return _valid_periodic(dec) if dec.periodic else _valid_window(dec)


def _assignment_ok(dec: Decomposition, branches: Sequence[int]) -> bool:
    for i in range(1, dec.n):
        if not dec.transition_ok(i, branches[i - 1], branches[i]):
            return False
    if dec.periodic:
        return dec.transition_ok(0, branches[-1], branches[0])
    return True


def _select(H, source, mu, kind: str, check: bool = True) -> AdmissibleSelection:
    dec = decompose(H, source, mu, check=check)
    valid = valid_nodes(dec)
    if any(not v for v in valid):
        raise CorrectorError(f"no admissible selection at mu={mu} (outside the admissible range or range violation)")
    # lower branch index = larger momentum
    pick = min if kind == "sup" else max
    br = tuple(pick(v) for v in valid)
    if not _assignment_ok(dec, br):
        raise CorrectorError(f"pointwise {kind} selection at mu={mu} fails a junction test")
    return AdmissibleSelection(dec, br, kind)


def sup_admissible(H: PiecewiseMonotoneHamiltonian, source, mu: float, check: bool = True) -> AdmissibleSelection:
    """Pointwise largest admissible selection (``f-bar``)."""
    return _select(H, source, mu, "sup", check)


def inf_admissible(H: PiecewiseMonotoneHamiltonian, source, mu: float, check: bool = True) -> AdmissibleSelection:
    """Pointwise smallest admissible selection (``f-underbar``)."""
    return _select(H, source, mu, "inf", check)


def brute_force_selections(dec: Decomposition) -> list[tuple[int, ...]]:
    """All feasible assignments passing every junction test (cyclically for periodic paths)."""
    if dec.periodic and dec.start_junction[0] is None:
        return [(j,) for j in dec.feasible[0]]
    return [br for br in itertools.product(*dec.feasible) if _assignment_ok(dec, br)]


def expected_slope(obj) -> float:
    """Period (or window) average of a selection or slope field."""
    if isinstance(obj, AdmissibleSelection):
        return obj.expected()
    return obj.mean()


# --- slope-average intervals --------------------------------------------------------

@dataclass(frozen=True)
class SlopeInterval:
    lo: float
    hi: float
    branches: tuple[int, ...]     # branch labels at the start of the period (strong component)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _lap_weights(dec: Decomposition):
    """Max/min one-period weights between start states of interval 0."""
    w = dec.weights()
    n = dec.n
    wmax, wmin = {}, {}
    if dec.start_junction[0] is None:
        for j in dec.feasible[0]:
            wmax[(j, j)] = wmin[(j, j)] = w[0, j - 1]
        return wmax, wmin
    for j0 in dec.feasible[0]:
        hi = {j0: w[0, j0 - 1]}
        lo = {j0: w[0, j0 - 1]}
        for i in range(1, n):
            nh, nl = {}, {}
            for j in dec.feasible[i]:
                preds = [jp for jp in hi if dec.transition_ok(i, jp, j)]
                if preds:
                    nh[j] = max(hi[jp] for jp in preds) + w[i, j - 1]
                    nl[j] = min(lo[jp] for jp in preds) + w[i, j - 1]
            hi, lo = nh, nl
        for j1 in dec.feasible[0]:
            preds = [jp for jp in hi if dec.transition_ok(0, jp, j1)]
            if preds:
                wmax[(j0, j1)] = max(hi[jp] for jp in preds)
                wmin[(j0, j1)] = min(lo[jp] for jp in preds)
    return wmax, wmin


def slope_intervals(H: PiecewiseMonotoneHamiltonian, source, mu: float) -> list[SlopeInterval]:
    """All averages ``E f`` of stationary admissible fields at level ``mu``, as closed intervals.

    Periodic sources: one-period moves between start states form a graph;
    each strongly connected component with a cycle contributes the interval
    between its smallest and largest cycle mean.  Windows: ``[E f-under, E f-bar]``.
    """
    dec = decompose(H, source, mu, check=False)
    L = dec.length
    if not dec.periodic:
        sel_hi = _select(H, dec.path, mu, "sup", check=False)
        sel_lo = _select(H, dec.path, mu, "inf", check=False)
        return [SlopeInterval(sel_lo.expected(), sel_hi.expected(), ())]
    wmax, wmin = _lap_weights(dec)
    G = nx.DiGraph()
    G.add_edges_from(wmax.keys())
    out = []
    for comp in nx.strongly_connected_components(G):
        sub = G.subgraph(comp)
        cycles = list(nx.simple_cycles(sub))
        if not cycles:
            continue
        hi = max(sum(wmax[(c[k], c[(k + 1) % len(c)])] for k in range(len(c))) / len(c) for c in cycles)
        lo = min(sum(wmin[(c[k], c[(k + 1) % len(c)])] for k in range(len(c))) / len(c) for c in cycles)
        out.append(SlopeInterval(lo / L, hi / L, tuple(sorted(comp))))
    if not out:
        raise CorrectorError(f"no stationary admissible field at mu={mu}")
    out.sort(key=lambda s: s.lo)
    return out


def flat_interval(H: PiecewiseMonotoneHamiltonian, source, mu: float) -> tuple[float, float]:
    """The widest interval of :func:`slope_intervals` (a point when ``mu`` is not a flat level)."""
    ivs = slope_intervals(H, source, mu)
    best = max(ivs, key=lambda s: (s.width, s.hi))
    return (best.lo, best.hi)


# --- mass interpolation -------------------------------------------------------------

@dataclass
class _Structure:
    branches: tuple[int, ...]           # branch per sub-interval (the one in force at its left end)
    switch: tuple[int, int, int] | None  # (sub-interval k, alpha, beta)
    lo: float
    hi: float


class RunInterpolator:
    """Admissible fields on a run of consecutive decomposition intervals with fixed outside.

    Candidate fields follow one branch per interval except for at most one
    free switch inside a single interval (a jump that passes the viscosity
    test everywhere in that interval's energy gap).  Their masses cover the
    targets needed by :func:`transition_slope`; :meth:`field_for` solves for
    the switch point that realizes a given mass exactly.
    """

    MAX_STRUCTURES = 200000

    def __init__(self, dec: Decomposition, run: Sequence[int], left: int | None, right: int | None):
        self.dec, self.run, self.left, self.right = dec, list(run), left, right
        self.cyclic = dec.periodic and len(self.run) == dec.n and left is None
        self.structures: list[_Structure] = []
        self._enumerate()

    def _switch_ok(self, k: int, alpha: int, beta: int) -> bool:
        dec = self.dec
        i = self.run[k]
        s = float(dec.s_mid[i])
        fa, fb = float(dec.H.psi(alpha, s)), float(dec.H.psi(beta, s))
        return junction_admissible(dec.H, dec.mu - s, dec.mu, fa, fb)

    def _enumerate(self):
        dec, run = self.dec, self.run
        w = dec.weights()
        r = len(run)
        switches = {k: [(a, b) for a in dec.feasible[run[k]] for b in dec.feasible[run[k]]
                        if a != b and self._switch_ok(k, a, b)] for k in range(r)}

        def rec(k, prev_last, first, acc, fixed, sw):
            if len(self.structures) > self.MAX_STRUCTURES:
                raise CorrectorError("too many candidate structures on this run")
            if k == r:
                if self.cyclic:
                    if not dec.transition_ok(run[0], prev_last, first):
                        return
                elif self.right is not None:
                    nxt = dec.successor(run[-1])
                    if not dec.transition_ok(nxt, prev_last, self.right):
                        return
                if sw is None:
                    self.structures.append(_Structure(tuple(acc), None, fixed, fixed))
                else:
                    kk, a, b = sw
                    i = run[kk]
                    lo, hi = sorted((fixed + w[i, b - 1], fixed + w[i, a - 1]))
                    self.structures.append(_Structure(tuple(acc), sw, lo, hi))
                return
            i = run[k]
            options = [(j, j, None) for j in dec.feasible[i]]
            if sw is None:
                options += [(a, b, (k, a, b)) for a, b in switches[k]]
            for enter, leave, new_sw in options:
                if k == 0:
                    if self.left is not None and not dec.transition_ok(i, self.left, enter):
                        continue
                elif not dec.transition_ok(i, prev_last, enter):
                    continue
                add = 0.0 if new_sw is not None else w[i, enter - 1]
                rec(k + 1, leave, enter if k == 0 else first, acc + [enter],
                    fixed + add, new_sw if new_sw is not None else sw)

        rec(0, None, None, [], 0.0, None)

    def mass_range(self) -> tuple[float, float]:
        return (min(s.lo for s in self.structures), max(s.hi for s in self.structures))

    def segments_for(self, target: float) -> list[Segment]:
        dec = self.dec
        H, path, mu = dec.H, dec.path, dec.mu
        for st in sorted(self.structures, key=lambda s: s.switch is not None):
            if not (st.lo - 1e-12 <= target <= st.hi + 1e-12):
                continue
            segs = []
            for k, i in enumerate(self.run):
                a, b = dec.intervals[i]
                if st.switch is not None and st.switch[0] == k:
                    _, al, be = st.switch
                    fixed = st.lo if st.lo == st.hi else None
                    w = dec.weights()
                    base = sum(w[ii, jj - 1] for kk, (ii, jj) in enumerate(zip(self.run, st.branches))
                               if kk != k)
                    fa, fb = _branch_fn(H, path, mu, al), _branch_fn(H, path, mu, be)
                    g = lambda x: base + gauss_legendre(fa, a, x) + gauss_legendre(fb, x, b) - target
                    ga, gb = g(a), g(b)
                    if abs(ga) <= 1e-13:
                        x = a
                    elif abs(gb) <= 1e-13:
                        x = b
                    else:
                        x = brentq(g, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
                    if x > a:
                        segs.append(Segment(a, x, fa, al))
                    if x < b:
                        segs.append(Segment(x, b, fb, be))
                    del fixed
                else:
                    segs.append(Segment(a, b, _branch_fn(H, path, mu, st.branches[k]), st.branches[k]))
            return segs
        lo, hi = self.mass_range()
        raise CorrectorError(f"mass target {target:.12g} not reachable on run (range [{lo:.12g}, {hi:.12g}])")


def _runs(dec: Decomposition, hi: Sequence[int], lo: Sequence[int]) -> list[list[int]]:
    """Maximal (cyclic) runs of intervals where the two assignments differ."""
    n = dec.n
    diff = [hi[i] != lo[i] for i in range(n)]
    if not any(diff):
        return []
    if all(diff):
        return [list(range(n))]
    runs, cur = [], []
    start = diff.index(False) if dec.periodic else 0
    for k in range(n):
        i = (start + k) % n if dec.periodic else k
        if diff[i]:
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def _assemble(dec: Decomposition, base: Sequence[int], replaced: dict[int, list[Segment]],
              provenance: str) -> SlopeField:
    segs = []
    for i, (a, b) in enumerate(dec.intervals):
        if i in replaced:
            segs.extend(replaced[i])
        else:
            segs.append(Segment(a, b, _branch_fn(dec.H, dec.path, dec.mu, base[i]), base[i]))
    return SlopeField(dec.path, dec.mu, segs, provenance, dec, None)


def interpolate(f1: SlopeField, f2: SlopeField, I: tuple[float, float], c: float) -> SlopeField:
    """Admissible field equal to ``f1`` outside ``I`` with ``int_I f = c``.

    ``f1 >= f2`` must be selections on the same decomposition that agree
    outside ``I``, and ``I`` must be a union of decomposition intervals.
    """
    dec = f1.decomposition
    if dec is None or f1.assignment is None or f2.assignment is None or f2.decomposition is not dec:
        raise ValueError("interpolate needs two selections on a common decomposition")
    a, b = I
    run = [i for i, (x, y) in enumerate(dec.intervals) if x >= a - 1e-12 and y <= b + 1e-12]
    if not run:
        raise ValueError("interval contains no decomposition interval")
    if abs(dec.intervals[run[0]][0] - a) > 1e-9 or abs(dec.intervals[run[-1]][1] - b) > 1e-9:
        raise ValueError("interval endpoints must be decomposition cuts")
    w = dec.weights()
    m1 = sum(w[i, f1.assignment[i] - 1] for i in run)
    m2 = sum(w[i, f2.assignment[i] - 1] for i in run)
    for i in range(dec.n):
        if i not in run and f1.assignment[i] != f2.assignment[i]:
            raise ValueError("f1 and f2 must agree outside I")
    if not (min(m1, m2) - 1e-12 <= c <= max(m1, m2) + 1e-12):
        raise ValueError(f"mass target {c} outside [{min(m1, m2)}, {max(m1, m2)}]")
    if abs(c - m1) <= 1e-15:
        return f1
    if abs(c - m2) <= 1e-15:
        return f2
    cyclic = dec.periodic and len(run) == dec.n
    left = None if cyclic or (not dec.periodic and run[0] == 0) else f1.assignment[run[0] - 1]
    nxt = dec.successor(run[-1])
    right = None if cyclic or nxt is None else f1.assignment[nxt]
    ri = RunInterpolator(dec, run, left, right)
    segs = ri.segments_for(c)
    replaced = {run[0]: segs}
    for i in run[1:]:
        replaced[i] = []
    return _assemble(dec, f1.assignment, replaced, "interpolation")


def transition_slope(H: PiecewiseMonotoneHamiltonian, source, mu: float, t: float) -> SlopeField:
    """Field with ``E f = t E f-bar + (1-t) E f-under``: each run where the two
    differ carries the mass ``t d-bar + (1-t) d-under``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    up = sup_admissible(H, source, mu)
    dn = inf_admissible(H, source, mu)
    dec = up.decomposition
    dn = AdmissibleSelection(dec, dn.branches, "inf")
    if t == 0.0:
        f = dn.field()
        f.provenance = "transition"
        return f
    if t == 1.0:
        f = up.field()
        f.provenance = "transition"
        return f
    w = dec.weights()
    replaced = {}
    for run in _runs(dec, up.branches, dn.branches):
        d_hi = sum(w[i, up.branches[i] - 1] for i in run)
        d_lo = sum(w[i, dn.branches[i] - 1] for i in run)
        cyclic = dec.periodic and len(run) == dec.n
        left = None if cyclic or (not dec.periodic and run[0] == 0) else up.branches[(run[0] - 1) % dec.n]
        nxt = dec.successor(run[-1])
        right = None if cyclic or nxt is None else up.branches[nxt]
        ri = RunInterpolator(dec, run, left, right)
        segs = ri.segments_for(t * d_hi + (1.0 - t) * d_lo)
        # split the run's segments back into the decomposition intervals they came from
        for i in run:
            a, b = dec.intervals[i]
            replaced[i] = [Segment(max(s.a, a), min(s.b, b), s.fn, s.label) for s in segs
                           if min(s.b, b) > max(s.a, a)]
    return _assemble(dec, up.branches, replaced, "transition")


# --- special fields --------------------------------------------------------------------

def monotone_solution(H: PiecewiseMonotoneHamiltonian, source, mu: float) -> SlopeField:
    """A nonnegative admissible field at any level ``mu >= 0``."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    f = sup_admissible(H, source, mu, check=False).field()
    f.provenance = "monotone-solution"
    return f


def zero_level_endpoints(H: PiecewiseMonotoneHamiltonian, model) -> tuple[float, float]:
    """``(q_{-1}, q_0)``: averages of ``Psi(-V)`` and of the smallest admissible field at level 0."""
    path = _as_path(model)
    Psi = H.branch(1, "left")
    q_m1 = gauss_legendre_batch(lambda y: Psi.inverse(-path(y)), np.array([path.y_lo]),
                                np.array([path.y_hi]))[0]
    if isinstance(model, PotentialModel):
        q_m1 = model.expected_functional(lambda v: Psi.inverse(-v), [])
    else:
        q_m1 /= path.length
    q0 = inf_admissible(H, model, 0.0, check=False).expected()
    return float(q_m1), float(q0)


def subsolution_at_zero(H: PiecewiseMonotoneHamiltonian, model, p: float, delta: float) -> SlopeField:
    """Stationary field with average ``p in [q_{-1}, q_0]`` whose antiderivative
    is a subsolution of ``H(u') + V = delta``.

    The line is cut where ``V = -delta/4``.  On shallow pieces the field is the
    convex combination ``t f0 + (1-t) Psi(-V)``; on deep pieces it follows
    ``Psi(-V)`` up to a switch point and the smallest level-0 field after it,
    with the switch placed so the piece carries the interpolated mass.
    """
    if H.L_left != 0:
        raise ValueError("subsolution_at_zero needs a Hamiltonian without bumps left of 0")
    path = _as_path(model)
    mbar = path.mbar
    cv = H.critical_values()
    cap = 0.5 * min(mbar, min(cv.m)) if cv.m else 0.5 * mbar
    if not 0 < delta < cap:
        raise ValueError(f"delta must lie in (0, {cap})")
    q_m1, q0 = zero_level_endpoints(H, model)
    if not q_m1 - 1e-12 <= p <= q0 + 1e-12:
        raise ValueError(f"p={p} outside [{q_m1}, {q0}]")
    t = 1.0 if q0 == q_m1 else (p - q_m1) / (q0 - q_m1)
    t = min(1.0, max(0.0, t))
    low = inf_admissible(H, path, 0.0, check=False).field()
    psi_left = _psi_left_fn(H, path, 0.0)
    xs, _ = monotone_crossings(path, -delta / 4.0)
    if len(xs) == 0:
        raise CorrectorError("potential never crosses -delta/4")
    cuts = list(xs) + [xs[0] + path.length]
    segs: list[Segment] = []

    def low_pieces(a, b):
        out = []
        for shift in (-path.length, 0.0, path.length):
            for s in low.segments:
                lo_, hi_ = max(s.a + shift, a), min(s.b + shift, b)
                if hi_ > lo_:
                    out.append(Segment(lo_, hi_, (lambda y, s=s, sh=shift: s.fn(y - sh)), s.label))
        out.sort(key=lambda s: s.a)
        return out

    for a, b in zip(cuts[:-1], cuts[1:]):
        shallow = float(path(np.array(0.5 * (a + b)))) > -delta / 4.0
        if shallow:
            fn = lambda y, t=t: t * low(y) + (1.0 - t) * psi_left(y)
            segs.append(Segment(a, b, fn, "mix"))
            continue
        r_hi = sum(gauss_legendre(s.fn, s.a, s.b) for s in low_pieces(a, b))
        r_lo = gauss_legendre(psi_left, a, b)
        target = t * r_hi + (1.0 - t) * r_lo
        g = lambda x: gauss_legendre(psi_left, a, x) + sum(
            gauss_legendre(s.fn, s.a, s.b) for s in low_pieces(x, b)) - target
        if t >= 1.0:
            x = a
        elif t <= 0.0:
            x = b
        else:
            x = brentq(g, a, b, xtol=1e-14)
        if x > a:
            segs.append(Segment(a, x, psi_left, "Psi"))
        segs.extend(low_pieces(x, b))
    return SlopeField(path, 0.0, segs, "subsolution-at-zero")


# --- vectorized level -> average-slope maps ----------------------------------------------

def _branch_kinks(br) -> list[float]:
    """Energies where the branch inverse has a kink (joins of its pieces)."""
    return [float(pc(pc.hi)) for pc in br.pieces[:-1]]


def momentum_map(path: PotentialPath, mus, default_branch, junction_levels=(), junction_arcs=(),
                 junction_branches=()) -> np.ndarray:
    """Period average of the field that follows ``junction_branches[J]`` after junction ``J``.

    Junction ``J`` sits on arc ``junction_arcs[J]`` of ``V`` where ``mu - V`` equals
    ``junction_levels[J]``.  Without junctions the field is ``default_branch``
    everywhere.  Evaluated for all ``mus`` at once; the period is cut at every
    extremum, junction and branch kink, so each piece is integrated smoothly.
    """
    from .potential import _GL_W, _GL_X, arc_positions, monotone_arcs
    mus = np.atleast_1d(np.asarray(mus, float))
    Q = len(mus)
    arcs = monotone_arcs(path)
    ya, yb, va, vb = arcs
    nA = len(ya)
    L = path.length
    brs = list(junction_branches) if len(junction_levels) else [default_branch]
    kinks = sorted({k for br in brs for k in _branch_kinks(br)})
    cuts = [np.broadcast_to(ya, (Q, nA)), np.broadcast_to(yb, (Q, nA))]
    if kinks:
        lv = mus[:, None, None] - np.asarray(kinks)[None, :, None]
        pos = arc_positions(path, arcs, np.broadcast_to(lv, (Q, len(kinks), nA)))
        cuts.append(pos.reshape(Q, -1))
    if len(junction_levels):
        jl = np.asarray(junction_levels, float)
        ja = np.asarray(junction_arcs, int)
        sub = (ya[ja], yb[ja], va[ja], vb[ja])
        jpos = arc_positions(path, sub, mus[:, None] - jl[None, :])      # (Q, nJ)
        cuts.append(jpos)
    pts = np.sort(np.concatenate(cuts, axis=1), axis=1)
    a, b = pts[:, :-1], pts[:, 1:]
    x = 0.5 * (b - a)[..., None] * _GL_X + 0.5 * (a + b)[..., None]
    s = mus[:, None, None] - path(x)
    if len(junction_levels):
        mid = 0.5 * (a + b)
        d = np.mod(mid[..., None] - jpos[:, None, :], L)                   # (Q, n, nJ)
        # Coincident junctions merge at an extremum of V, one on the arc ending there
        # and one on the arc starting there; the latter owns what follows.  Remaining
        # ties go to the later junction in reference order.
        at_start = np.abs(jpos - ya[ja][None, :]) <= 1e-12 * max(1.0, L)   # (Q, nJ)
        d = d - 1e-11 * at_start[:, None, :] - 1e-14 * np.arange(len(jl))
        owner = np.argmin(d, axis=2)
        vals = np.zeros_like(s)
        for J, br in enumerate(brs):
            m = owner == J
            if np.any(m):
                vals[m] = br.inverse(s[m])
    else:
        vals = default_branch.inverse(s)
    tot = np.sum(0.5 * (b - a) * (vals @ _GL_W), axis=1)
    return tot / L


def selection_momentum_map(H: PiecewiseMonotoneHamiltonian, source, mu_ref: float, kind: str = "sup"):
    """``mu -> E f`` for the selection pattern found at ``mu_ref``.

    The pattern (which branch follows which cut) does not change while no
    level ``mu - c`` passes an extremum value of ``V``, so the map is exact on
    the open range of ``mu`` around ``mu_ref`` delimited by those values.
    """
    from .potential import monotone_arcs
    path = _as_path(source)
    sel = _select(H, path, mu_ref, kind, check=False)
    dec = sel.decomposition
    if any(J is not None and J.tangent for J in dec.start_junction):
        raise CorrectorError("reference level sits on a tangency")
    if dec.start_junction[0] is None:
        br = H.branch(sel.branches[0])
        return lambda mus: momentum_map(path, mus, br)
    ya, yb, _, _ = monotone_arcs(path)
    levels, arcs_idx, brs = [], [], []
    for i, J in enumerate(dec.start_junction):
        y = J.y
        k = None
        for cand in (y, y + path.length):
            hit = np.flatnonzero((ya <= cand + 1e-12) & (cand <= yb + 1e-12))
            if hit.size:
                k = int(hit[0])
                break
        if k is None:
            raise CorrectorError("junction not located on any arc")
        levels.append(J.level)
        arcs_idx.append(k)
        brs.append(H.branch(sel.branches[i]))
    # start the reference order after the widest gap so that collapsing
    # neighbours are always consecutive in that order
    ys = [J.y for J in dec.start_junction]
    gaps = [(ys[(i + 1) % len(ys)] - ys[i]) % path.length for i in range(len(ys))]
    r = (int(np.argmax(gaps)) + 1) % len(ys)
    levels, arcs_idx, brs = levels[r:] + levels[:r], arcs_idx[r:] + arcs_idx[:r], brs[r:] + brs[:r]
    return lambda mus: momentum_map(path, mus, brs[0], levels, arcs_idx, brs)


def branch_momentum_map(H: PiecewiseMonotoneHamiltonian, source, j: int, side: str = "right"):
    """``mu -> E[psi_j(mu - V(0))]`` (vectorized for periodic sources)."""
    br = H.branch(j, side)
    if isinstance(source, PotentialModel) and not getattr(source, "periodic", False):
        kinks = _branch_kinks(br)
        return lambda mus: np.array([source.expected_functional(lambda v, m=m: br.inverse(m - v),
                                                                [m - k for k in kinks])
                                     for m in np.atleast_1d(mus)])
    path = _as_path(source)
    return lambda mus: momentum_map(path, mus, br)
