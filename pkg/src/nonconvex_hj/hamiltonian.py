"""Coercive piecewise-monotone Hamiltonians ``H(p)`` on the real line.

A Hamiltonian is stored as an ordered list of monotone pieces.  Affine pieces
are first class and give exact branch inverses; general pieces carry a
strictly monotone sample table interpolated with a monotone cubic (PCHIP).

Conventions for a normalized Hamiltonian (``min H = H(0) = 0``)::

    right turning points  p_1 > p_2 > ... > p_{2L} > p_{2L+1} = 0
    left turning points   pt_1 < pt_2 < ... < pt_{2Lt+1} = 0
    m_i = H(p_{2i-1}),  M_i = H(p_{2i})

Right branch ``k`` is ``H`` restricted to ``[p_k, p_{k-1}]`` (``k = 1`` is the
tail ``[p_1, inf)``) and ``psi(k, s)`` is its inverse.  Left branches are
numbered the same way from the left tail inwards.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

INVERSE_TOL = 1e-12
_CONT_TOL = 1e-9


class HamiltonianError(ValueError):
    """Raised when a Hamiltonian violates a structural assumption."""


class BranchRangeError(ValueError):
    """Raised when a branch inverse is requested outside the branch's value range."""


@dataclass(frozen=True)
class Piece:
    """One strictly monotone piece of ``H`` on ``[lo, hi]`` (ends may be infinite)."""

    lo: float
    hi: float
    slope: float | None = None          # affine pieces
    anchor: float = 0.0                 # affine: H(anchor) = anchor_value
    anchor_value: float = 0.0
    table_p: tuple[float, ...] | None = None
    table_h: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.lo < self.hi:
            raise HamiltonianError(f"empty piece [{self.lo}, {self.hi}]")
        if self.slope is None:
            if self.table_p is None or self.table_h is None:
                raise HamiltonianError("table piece needs samples")
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                raise HamiltonianError("table pieces must have a finite domain")
            d = np.diff(self.table_h)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise HamiltonianError(f"table piece on [{self.lo}, {self.hi}] is not strictly monotone")
        elif self.slope == 0.0:
            raise HamiltonianError(f"flat affine piece on [{self.lo}, {self.hi}]")

    @property
    def is_affine(self) -> bool:
        return self.slope is not None

    @property
    def increasing(self) -> bool:
        if self.is_affine:
            return self.slope > 0
        return self.table_h[-1] > self.table_h[0]

    def _interp(self):
        # cached lazily; frozen dataclass so go through object.__setattr__
        f = self.__dict__.get("_pchip")
        if f is None:
            f = PchipInterpolator(np.asarray(self.table_p), np.asarray(self.table_h), extrapolate=True)
            object.__setattr__(self, "_pchip", f)
        return f

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.is_affine:
            return self.anchor_value + self.slope * (p - self.anchor)
        return self._interp()(np.clip(p, self.lo, self.hi))

    def value_at(self, p: float) -> float:
        if math.isinf(p):
            return math.inf if (p > 0) == self.increasing else math.inf
        return float(self(p))

    def derivative(self, p):
        p = np.asarray(p, dtype=float)
        if self.is_affine:
            return np.full_like(p, self.slope)
        return self._interp().derivative()(np.clip(p, self.lo, self.hi))

    def max_abs_slope(self) -> float:
        if self.is_affine:
            return abs(self.slope)
        grid = np.linspace(self.lo, self.hi, 2001)
        return float(np.max(np.abs(self.derivative(grid))))

    def restricted(self, lo: float, hi: float) -> "Piece":
        lo, hi = max(lo, self.lo), min(hi, self.hi)
        if self.is_affine:
            return Piece(lo, hi, self.slope, self.anchor, self.anchor_value)
        p = np.asarray(self.table_p)
        keep = (p > lo) & (p < hi)
        ps = np.concatenate([[lo], p[keep], [hi]])
        return Piece(lo, hi, table_p=tuple(ps), table_h=tuple(self(ps)))

    def shifted(self, dp: float, de: float) -> "Piece":
        if self.is_affine:
            return Piece(self.lo + dp, self.hi + dp, self.slope, self.anchor + dp, self.anchor_value + de)
        return Piece(self.lo + dp, self.hi + dp,
                     table_p=tuple(np.asarray(self.table_p) + dp),
                     table_h=tuple(np.asarray(self.table_h) + de))

    def reflected(self) -> "Piece":
        if self.is_affine:
            return Piece(-self.hi, -self.lo, -self.slope, -self.anchor, self.anchor_value)
        return Piece(-self.hi, -self.lo,
                     table_p=tuple(-np.asarray(self.table_p)[::-1]),
                     table_h=tuple(np.asarray(self.table_h)[::-1]))


@dataclass(frozen=True)
class Branch:
    """A maximal monotone run of pieces.  ``side`` is ``"right"`` or ``"left"``."""

    side: str
    index: int
    lo: float
    hi: float
    increasing: bool
    pieces: tuple[Piece, ...]

    @property
    def value_range(self) -> tuple[float, float]:
        a = _piece_value(self.pieces[0], self.lo)
        b = _piece_value(self.pieces[-1], self.hi)
        return (min(a, b), max(a, b))

    @property
    def is_affine(self) -> bool:
        return all(pc.is_affine for pc in self.pieces)

    def contains_value(self, s: float, tol: float = 0.0) -> bool:
        a, b = self.value_range
        return a - tol <= s <= b + tol

    def inverse(self, s, tol: float = 1e-9):
        """Momentum ``p`` in this branch with ``H(p) = s`` (vectorized)."""
        s_arr = np.asarray(s, dtype=float)
        a, b = self.value_range
        if np.any(s_arr < a - tol) or np.any(s_arr > b + tol):
            bad = s_arr[(s_arr < a - tol) | (s_arr > b + tol)].ravel()[0]
            raise BranchRangeError(
                f"{self.side} branch {self.index}: value {bad:.12g} outside valid range [{a:.12g}, {b:.12g}]")
        s_arr = np.clip(s_arr, a, b)
        if self.is_affine:
            out = self._affine_inverse(s_arr)
        else:
            out = self._bisect_inverse(s_arr)
        return out if out.ndim else float(out)

    def _affine_inverse(self, s):
        knots = [self.lo] + [pc.hi for pc in self.pieces[:-1]] + [self.hi]
        finite = [k for k in knots if math.isfinite(k)]
        vals = [_piece_value(self._piece_at(k), k) for k in finite]
        xs, vs = np.asarray(finite), np.asarray(vals)
        order = np.argsort(vs)
        out = np.interp(s, vs[order], xs[order])
        # affine tails beyond the last finite knot
        if math.isinf(self.hi):
            tail = self.pieces[-1]
            m = s > vs.max() if tail.increasing else s < vs.min()
            out = np.where(m, tail.anchor + (s - tail.anchor_value) / tail.slope, out)
        if math.isinf(self.lo):
            tail = self.pieces[0]
            m = s > vs.max() if not tail.increasing else s < vs.min()
            out = np.where(m, tail.anchor + (s - tail.anchor_value) / tail.slope, out)
        return out

    def _piece_at(self, p):
        for pc in self.pieces:
            if pc.lo <= p <= pc.hi:
                return pc
        raise AssertionError("momentum outside branch")

    def _evaluate(self, p):
        out = np.empty_like(p)
        for pc in self.pieces:
            m = (p >= pc.lo) & (p <= pc.hi)
            out[m] = pc(p[m])
        return out

    def _bisect_inverse(self, s):
        lo_p, hi_p = self.lo, self.hi
        a, b = self.value_range
        if math.isinf(hi_p):
            hi_p = max(lo_p, 0.0) + 1.0
            while float(self._evaluate(np.array([hi_p]))[0]) < np.max(s):
                hi_p = lo_p + 2.0 * (hi_p - lo_p)
        if math.isinf(lo_p):
            lo_p = min(hi_p, 0.0) - 1.0
            while float(self._evaluate(np.array([lo_p]))[0]) < np.max(s):
                lo_p = hi_p - 2.0 * (hi_p - lo_p)
        x0 = np.full(s.shape, lo_p)
        x1 = np.full(s.shape, hi_p)
        sign = 1.0 if self.increasing else -1.0
        flat = s.ravel()
        x0, x1 = x0.ravel(), x1.ravel()
        while np.max(x1 - x0) > INVERSE_TOL:
            mid = 0.5 * (x0 + x1)
            below = sign * (self._evaluate(mid) - flat) < 0
            x0 = np.where(below, mid, x0)
            x1 = np.where(below, x1, mid)
        return (0.5 * (x0 + x1)).reshape(s.shape)


def _piece_value(pc: Piece, p: float) -> float:
    if math.isinf(p):
        return math.inf
    return float(pc(p))


@dataclass(frozen=True)
class CriticalValues:
    m: tuple[float, ...]
    M: tuple[float, ...]
    m_left: tuple[float, ...]
    M_left: tuple[float, ...]

    @property
    def m_min(self) -> float | None:
        return min(self.m) if self.m else None

    @property
    def M_max(self) -> float | None:
        return max(self.M) if self.M else None

    @property
    def gap(self) -> float | None:
        """Oscillation gap ``max_{i,j} (M_i - m_j)`` over the right bumps."""
        if not self.M:
            return None
        return max(self.M) - min(self.m)


class PiecewiseMonotoneHamiltonian:
    """Continuous, coercive, piecewise strictly monotone ``H: R -> R``."""

    def __init__(self, pieces: Sequence[Piece]):
        pieces = _merge_collinear(list(pieces))
        if not pieces:
            raise HamiltonianError("no pieces")
        if not (math.isinf(pieces[0].lo) and pieces[0].lo < 0 and math.isinf(pieces[-1].hi)):
            raise HamiltonianError("pieces must cover the whole real line")
        for a, b in zip(pieces, pieces[1:]):
            if a.hi != b.lo:
                raise HamiltonianError(f"pieces not contiguous at {a.hi} / {b.lo}")
            va, vb = float(a(a.hi)), float(b(b.lo))
            if abs(va - vb) > _CONT_TOL * max(1.0, abs(va)):
                raise HamiltonianError(f"H discontinuous at p={a.hi}: {va} vs {vb}")
        if pieces[0].increasing or not pieces[-1].increasing:
            raise HamiltonianError("H is not coercive: tails must go to +inf")
        self.pieces = tuple(pieces)
        self._bounds = np.array([pc.lo for pc in pieces[1:]])
        self._all_affine = all(pc.is_affine for pc in pieces)
        turning = []
        for a, b in zip(pieces, pieces[1:]):
            if a.increasing != b.increasing:
                turning.append((a.hi, float(b(b.lo)), "max" if a.increasing else "min"))
        self.turning_points = tuple(turning)
        self.lipschitz_bound = max(pc.max_abs_slope() for pc in pieces)
        self._branches: dict = {}

    # --- construction helpers -------------------------------------------------
    @classmethod
    def from_knots(cls, knots: Sequence[float], values: Sequence[float],
                   left_slope: float, right_slope: float) -> "PiecewiseMonotoneHamiltonian":
        """Piecewise-affine ``H`` through ``(knots, values)`` with affine tails."""
        knots = [float(k) for k in knots]
        values = [float(v) for v in values]
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise HamiltonianError("knots must be strictly ascending")
        pieces = [Piece(-math.inf, knots[0], left_slope, knots[0], values[0])]
        for (a, va), (b, vb) in zip(zip(knots, values), zip(knots[1:], values[1:])):
            pieces.append(Piece(a, b, (vb - va) / (b - a), a, va))
        pieces.append(Piece(knots[-1], math.inf, right_slope, knots[-1], values[-1]))
        return cls(pieces)

    @classmethod
    def from_dict(cls, spec: dict) -> "PiecewiseMonotoneHamiltonian":
        branches = spec["branches"]
        pieces: list[Piece] = []
        for br in branches:
            kind = br.get("kind", "affine")
            if kind == "affine":
                a, b = map(float, br["domain"])
                pieces.append(Piece(a, b, float(br["slope"]), a, float(br["value_at_left"])))
            elif kind == "table":
                ps, hs = br["p"], br["H"]
                pieces.append(Piece(float(ps[0]), float(ps[-1]), table_p=tuple(ps), table_h=tuple(hs)))
            else:
                raise HamiltonianError(f"unknown branch kind {kind!r}")
        first, last = pieces[0], pieces[-1]
        left = Piece(-math.inf, first.lo, float(spec["tail_slope_left"]), first.lo, float(first(first.lo)))
        right = Piece(last.hi, math.inf, float(spec["tail_slope_right"]), last.hi, float(last(last.hi)))
        return cls([left] + pieces + [right])

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseMonotoneHamiltonian":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        inner = self.pieces[1:-1]
        out = []
        for pc in inner:
            if pc.is_affine:
                out.append({"kind": "affine", "domain": [pc.lo, pc.hi], "slope": pc.slope,
                            "value_at_left": float(pc(pc.lo))})
            else:
                out.append({"kind": "table", "p": list(pc.table_p), "H": list(pc.table_h)})
        if not inner:  # single kink at the join of the two tails
            k = self.pieces[0].hi
            out.append({"kind": "affine", "domain": [k - 1.0, k], "slope": self.pieces[0].slope,
                        "value_at_left": float(self.pieces[0](k - 1.0))})
            out.append({"kind": "affine", "domain": [k, k + 1.0], "slope": self.pieces[-1].slope,
                        "value_at_left": float(self.pieces[-1](k))})
        return {"branches": out, "tail_slope_left": self.pieces[0].slope,
                "tail_slope_right": self.pieces[-1].slope}

    # --- evaluation -----------------------------------------------------------
    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        idx = np.searchsorted(self._bounds, p, side="right")
        out = np.empty_like(p)
        for i, pc in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                out[m] = pc(p[m])
        return out if out.ndim else float(out)

    evaluate = __call__

    def derivative(self, p):
        p = np.asarray(p, dtype=float)
        idx = np.searchsorted(self._bounds, p, side="right")
        out = np.empty_like(p)
        for i, pc in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                out[m] = pc.derivative(p[m])
        return out

    def range_max(self, a, b):
        """``max_{p in [a, b]} H(p)`` computed from the monotone structure (``a <= b``)."""
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        out = np.maximum(self(a), self(b))
        for t, v, kind in self.turning_points:
            if kind == "max":
                out = np.where((a < t) & (t < b), np.maximum(out, v), out)
        return out

    def range_min(self, a, b):
        """``min_{p in [a, b]} H(p)`` (``a <= b``)."""
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        out = np.minimum(self(a), self(b))
        for t, v, kind in self.turning_points:
            if kind == "min":
                out = np.where((a < t) & (t < b), np.minimum(out, v), out)
        return out

    # --- structure ------------------------------------------------------------
    @property
    def minimizer(self) -> float:
        mins = [(v, t) for t, v, kind in self.turning_points if kind == "min"]
        return min(mins)[1]

    @property
    def min_value(self) -> float:
        return min(v for t, v, kind in self.turning_points if kind == "min")

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(self(0.0)) <= tol and any(t == 0.0 and k == "min" for t, _, k in self.turning_points) \
            and self.min_value >= -tol

    def check_normalized(self) -> None:
        """Raise unless ``min H = H(0) = 0`` and critical values are distinct (per side)."""
        if not self.is_normalized():
            raise HamiltonianError("H must satisfy min H = H(0) = 0 with a turning point at 0")
        for side, vals in (("right", self.right_critical_values()), ("left", self.left_critical_values())):
            nz = vals[:-1]
            if any(v <= 0 for v in nz):
                raise HamiltonianError(f"{side} critical values must be positive away from p=0: {nz}")
            if len(set(nz)) != len(nz):
                raise HamiltonianError(f"{side} critical values are not distinct: {nz}")

    @property
    def right_breakpoints(self) -> tuple[float, ...]:
        """``p_1 > p_2 > ... > p_{2L+1} = 0``."""
        return tuple(sorted((t for t, _, _ in self.turning_points if t >= 0.0), reverse=True))

    @property
    def left_breakpoints(self) -> tuple[float, ...]:
        """``pt_1 < ... < pt_{2Lt+1} = 0``."""
        return tuple(sorted(t for t, _, _ in self.turning_points if t <= 0.0))

    def right_critical_values(self) -> list[float]:
        return [float(self(t)) for t in self.right_breakpoints]

    def left_critical_values(self) -> list[float]:
        return [float(self(t)) for t in self.left_breakpoints]

    @property
    def L(self) -> int:
        return (len(self.right_breakpoints) - 1) // 2

    @property
    def L_left(self) -> int:
        return (len(self.left_breakpoints) - 1) // 2

    @property
    def K(self) -> int:
        return max(self.L, self.L_left)

    @property
    def bump_count(self) -> int:
        """Number of interior local maxima (independent of normalization)."""
        return sum(1 for *_, k in self.turning_points if k == "max")

    def critical_values(self) -> CriticalValues:
        r, l = self.right_critical_values(), self.left_critical_values()
        return CriticalValues(m=tuple(r[0:-1:2]), M=tuple(r[1:-1:2]),
                              m_left=tuple(l[0:-1:2]), M_left=tuple(l[1:-1:2]))

    def _pieces_between(self, lo: float, hi: float) -> tuple[Piece, ...]:
        return tuple(pc.restricted(lo, hi) for pc in self.pieces if pc.hi > lo and pc.lo < hi)

    def branch(self, k: int, side: str = "right") -> Branch:
        """Right branch ``k`` (``1 <= k <= 2L+1``) or the left analog."""
        key = (k, side)
        if key not in self._branches:
            self._branches[key] = self._make_branch(k, side)
        return self._branches[key]

    def _make_branch(self, k: int, side: str) -> Branch:
        if side == "right":
            bp = self.right_breakpoints
            if not 1 <= k <= len(bp):
                raise HamiltonianError(f"right branch index {k} out of range 1..{len(bp)}")
            lo, hi = bp[k - 1], (math.inf if k == 1 else bp[k - 2])
            inc = (k % 2 == 1)
        elif side == "left":
            bp = self.left_breakpoints
            if not 1 <= k <= len(bp):
                raise HamiltonianError(f"left branch index {k} out of range 1..{len(bp)}")
            lo, hi = (-math.inf if k == 1 else bp[k - 2]), bp[k - 1]
            inc = (k % 2 == 0)
        else:
            raise ValueError(side)
        return Branch(side, k, lo, hi, inc, self._pieces_between(lo, hi))

    def right_branches(self) -> list[Branch]:
        return [self.branch(k) for k in range(1, len(self.right_breakpoints) + 1)]

    def branch_inverse(self, k: int, s, side: str = "right"):
        """``psi_k(s)``: the momentum on branch ``k`` where ``H`` equals ``s``."""
        return self.branch(k, side).inverse(s)

    def psi(self, k: int, s):
        return self.branch(k).inverse(s)

    def Psi(self, s):
        """Inverse of ``H`` on the outermost left branch (all of ``(-inf, 0]`` when ``Lt = 0``)."""
        return self.branch(1, "left").inverse(s)

    # --- transforms -----------------------------------------------------------
    def shifted(self, dp: float, de: float) -> "PiecewiseMonotoneHamiltonian":
        """``p -> H(p - dp) + de``."""
        return PiecewiseMonotoneHamiltonian([pc.shifted(dp, de) for pc in self.pieces])

    def reflected(self) -> "PiecewiseMonotoneHamiltonian":
        """``p -> H(-p)``."""
        return PiecewiseMonotoneHamiltonian([pc.reflected() for pc in reversed(self.pieces)])

    def normalized(self) -> tuple["PiecewiseMonotoneHamiltonian", float, float]:
        """Shift the global minimizer to the origin.  Returns ``(H0, p*, H(p*))``."""
        p_star, e_star = self.minimizer, self.min_value
        return self.shifted(-p_star, -e_star), p_star, e_star

    def __repr__(self) -> str:
        tp = ", ".join(f"{t:g}:{v:g}" for t, v, _ in self.turning_points)
        return f"PiecewiseMonotoneHamiltonian(turning=[{tp}], lip={self.lipschitz_bound:g})"


def _merge_collinear(pieces: list[Piece]) -> list[Piece]:
    out: list[Piece] = []
    for pc in pieces:
        if out and out[-1].is_affine and pc.is_affine and out[-1].hi == pc.lo and \
                abs(out[-1].slope - pc.slope) <= 1e-13 * max(1.0, abs(pc.slope)) and \
                abs(float(out[-1](pc.lo)) - float(pc(pc.lo))) <= _CONT_TOL * max(1.0, abs(float(pc(pc.lo)))):
            prev = out.pop()
            pc = Piece(prev.lo, pc.hi, prev.slope, prev.anchor, prev.anchor_value)
        out.append(pc)
    return out


# --- surgery ------------------------------------------------------------------

def _with_tails(H: PiecewiseMonotoneHamiltonian, lo: float, hi: float,
                left_slope: float | None, right_slope: float | None) -> PiecewiseMonotoneHamiltonian:
    core = list(H._pieces_between(lo, hi))
    if left_slope is not None:
        core.insert(0, Piece(-math.inf, lo, left_slope, lo, float(H(lo))))
    if right_slope is not None:
        core.append(Piece(hi, math.inf, right_slope, hi, float(H(hi))))
    return PiecewiseMonotoneHamiltonian(core)


def split_at_zero(H: PiecewiseMonotoneHamiltonian, C: float | None = None):
    """``(H+, H-)``: ``H`` on one side of 0 and ``C|p|`` on the other, ``C = 2 * Lip(H)``."""
    C = 2.0 * H.lipschitz_bound if C is None else C
    plus = _with_tails(H, 0.0, math.inf, -C, None)
    minus = _with_tails(H, -math.inf, 0.0, None, C)
    return plus, minus


def _surgery_indices(H: PiecewiseMonotoneHamiltonian):
    if H.L_left != 0:
        raise HamiltonianError("surgery requires a Hamiltonian with no bumps left of 0")
    if H.L == 0:
        raise HamiltonianError("surgery requires at least one bump")
    cv = H.critical_values()
    k = int(np.argmax(cv.M)) + 1
    l = int(np.argmin(cv.m)) + 1
    return k, l, cv


def carve_left(H: PiecewiseMonotoneHamiltonian, k: int | None = None, l: int | None = None,
               mbar: float | None = None):
    """Surgery for ``l > k``: ``H1 = H`` on ``(-inf, p_2k]``, ``H2 = H`` on ``[p_2l, inf)``."""
    k0, l0, cv = _surgery_indices(H)
    k = k0 if k is None else k
    l = l0 if l is None else l
    if not l > k:
        raise HamiltonianError(f"carve_left needs l > k (got k={k}, l={l})")
    if mbar is not None and not mbar < cv.M[k - 1] - cv.m[l - 1]:
        raise HamiltonianError("carve_left needs mbar < M_k - m_l")
    bp = H.right_breakpoints
    C = H.lipschitz_bound
    H1 = _with_tails(H, -math.inf, bp[2 * k - 1], None, C)
    H2 = _with_tails(H, bp[2 * l - 1], math.inf, -C, None)
    return H1, H2


def carve_right(H: PiecewiseMonotoneHamiltonian, k: int | None = None, l: int | None = None,
                mbar: float | None = None):
    """Surgery for ``l <= k``: both pieces are cut at ``p_2k``."""
    k0, l0, cv = _surgery_indices(H)
    k = k0 if k is None else k
    l = l0 if l is None else l
    if not l <= k:
        raise HamiltonianError(f"carve_right needs l <= k (got k={k}, l={l})")
    if mbar is not None and not mbar < cv.M[k - 1] - cv.m[l - 1]:
        raise HamiltonianError("carve_right needs mbar < M_k - m_l")
    p2k = H.right_breakpoints[2 * k - 1]
    C = H.lipschitz_bound
    H1 = _with_tails(H, -math.inf, p2k, None, C)
    H2 = _with_tails(H, p2k, math.inf, -C, None)
    return H1, H2


# --- normalization of raw continuous Hamiltonians ---------------------------------

@dataclass(frozen=True)
class NormalizationRecord:
    """Bookkeeping for ``H_norm(q) = H_raw(q + momentum_shift) - energy_shift + perturbation(q)``."""

    momentum_shift: float
    energy_shift: float
    perturbations: tuple[tuple[float, float], ...] = ()   # (turning point in normalized q, added value)
    mollification_width: float = 0.0
    probe_bound: float = 0.0

    def raw_momentum(self, q):
        return np.asarray(q) + self.momentum_shift

    def normalized_momentum(self, p):
        return np.asarray(p) - self.momentum_shift

    def denormalize(self, H: PiecewiseMonotoneHamiltonian) -> PiecewiseMonotoneHamiltonian:
        return H.shifted(self.momentum_shift, self.energy_shift)


def _probe_ok(f, mbar: float, P: float) -> bool:
    """``H`` strictly monotone outward on ``P/2 <= |p| <= P`` and ``H(+-P/2) > 2 (mbar + c)``
    with ``c`` the largest turning value found on ``|p| <= P/2``."""
    ps = np.linspace(-P, P, 4001)
    hs = f(ps)
    d = np.diff(hs)
    if not (np.all(d[ps[1:] <= -P / 2] < 0) and np.all(d[ps[:-1] >= P / 2] > 0)):
        return False
    inner = np.abs(ps) <= P / 2
    h_in = hs[inner]
    s_in = np.sign(np.diff(h_in))
    turn = np.nonzero(s_in[1:] != s_in[:-1])[0] + 1
    c = float(np.max(h_in[turn])) if len(turn) else float(np.min(h_in))
    edge = min(float(f(np.array([-P / 2]))[0]), float(f(np.array([P / 2]))[0]))
    return edge > 2.0 * (mbar + c)


def _probe_range(f, mbar: float, max_doublings: int = 20) -> float:
    """Smallest probed ``P`` passing :func:`_probe_ok` at ``P``, ``2P`` and ``4P``.

    Requiring three consecutive scales guards against bumps just outside the
    probed window; no finite probe can exclude bumps arbitrarily far out.
    """
    P = 1.0
    for _ in range(max_doublings):
        if all(_probe_ok(f, mbar, P * s) for s in (1.0, 2.0, 4.0)):
            return P
        P *= 2.0
    raise HamiltonianError("could not detect coercivity on the probed range")


def _refined_samples(f, a: float, b: float, n: int, tol: float, max_rounds: int = 60) -> np.ndarray:
    """Abscissae on ``[a, b]`` whose monotone cubic interpolant is within ``tol / 4`` of ``f``
    at every cell midpoint (cells are bisected until they pass)."""
    q = np.linspace(a, b, n)
    for _ in range(max_rounds):
        mid = 0.5 * (q[1:] + q[:-1])
        err = np.abs(f(mid) - PchipInterpolator(q, f(q))(mid))
        bad = err > 0.25 * tol
        if not np.any(bad):
            break
        q = np.sort(np.concatenate([q, mid[bad]]))
    return q


def normalize(H_raw, tol: float = 1e-6, mbar: float = 0.0, n_samples: int = 8001):
    """Build a normalized :class:`PiecewiseMonotoneHamiltonian` from a coercive callable.

    The global minimizer (the largest one on ties) is moved to the origin.
    Critical values that coincide within ``tol`` are separated: the ``i``-th
    duplicate in a tie group of size ``K + 1`` is raised by ``i * tol / (2K)``
    (maxima via a hat supported between neighbouring turning points; minima by
    lowering everything else, which keeps each piece strictly monotone).
    """
    f = lambda p: np.asarray(H_raw(np.asarray(p, dtype=float)), dtype=float)
    P = _probe_range(f, mbar)
    ps = np.linspace(-P, P, n_samples)
    hs = f(ps)
    d = np.sign(np.diff(hs))
    # drop exact plateaus by carrying the previous sign
    for i in range(1, len(d)):
        if d[i] == 0:
            d[i] = d[i - 1]
    turn_idx = [i + 1 for i in range(len(d) - 1) if d[i] != d[i + 1]]
    turning = []
    for i in turn_idx:
        kind = "max" if d[i - 1] > 0 else "min"
        sgn = -1.0 if kind == "max" else 1.0
        res = minimize_scalar(lambda x: sgn * float(f(np.array([x]))[0]),
                              bounds=(ps[i - 1], ps[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        turning.append((float(res.x), kind))
    mins = [t for t, k in turning if k == "min"]
    if not mins:
        raise HamiltonianError("no interior minimum found")
    min_vals = [float(f(np.array([t]))[0]) for t in mins]
    vmin = min(min_vals)
    ties = [t for t, v in zip(mins, min_vals) if v - vmin <= tol]
    p_star = max(ties)
    e_star = float(f(np.array([p_star]))[0])

    knots = [ps[0]] + [t for t, _ in turning] + [ps[-1]]
    values = [float(f(np.array([k]))[0]) - e_star for k in knots]
    kinds = [None] + [k for _, k in turning] + [None]

    # separate coinciding critical values (0 counts as the value of the origin minimum)
    crit_idx = [i for i in range(1, len(knots) - 1) if knots[i] != p_star]
    zero_i = knots.index(p_star)
    groups: list[list[int]] = []
    for i in sorted(crit_idx, key=lambda j: values[j]):
        for g in groups:
            if abs(values[g[0]] - values[i]) <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    zero_group = [i for i in crit_idx if abs(values[i]) <= tol]
    delta = np.zeros(len(knots))
    perturb: list[tuple[float, float]] = []
    for g in groups:
        members = sorted(set(g) | ({zero_i} if g and abs(values[g[0]]) <= tol else set()), key=lambda j: knots[j])
        if zero_i in members:
            members.remove(zero_i)
            members.insert(0, zero_i)
        K = len(members) - 1
        for rank, i in enumerate(members):
            if rank == 0 or K == 0:
                continue
            delta[i] = rank * tol / (2 * K)
    del zero_group

    # Each piece is remapped affinely in the value variable so that its two end
    # values move by the chosen deltas; this keeps every piece strictly monotone.
    pieces: list[Piece] = []
    samp_per = max(64, n_samples // max(1, len(knots) - 1))
    for j, (a, b) in enumerate(zip(knots, knots[1:])):
        q = _refined_samples(f, a, b, samp_per, tol)
        h = f(q) - e_star
        h[0], h[-1] = values[j], values[j + 1]
        va, vb = values[j], values[j + 1]
        w = (h - va) / (vb - va)
        h = h + (1.0 - w) * delta[j] + w * delta[j + 1]
        pieces.append(Piece(a - p_star, b - p_star, table_p=tuple(q - p_star), table_h=tuple(h)))
    lslope = (pieces[0].table_h[1] - pieces[0].table_h[0]) / (pieces[0].table_p[1] - pieces[0].table_p[0])
    rslope = (pieces[-1].table_h[-1] - pieces[-1].table_h[-2]) / (pieces[-1].table_p[-1] - pieces[-1].table_p[-2])
    pieces.insert(0, Piece(-math.inf, knots[0] - p_star, lslope, knots[0] - p_star, pieces[0].table_h[0]))
    pieces.append(Piece(knots[-1] - p_star, math.inf, rslope, knots[-1] - p_star, pieces[-1].table_h[-1]))
    H = PiecewiseMonotoneHamiltonian(pieces)
    perturb = tuple((knots[i] - p_star, float(delta[i])) for i in range(len(knots)) if delta[i] != 0.0)
    rec = NormalizationRecord(p_star, e_star, perturb, 0.0, P)
    return H, rec
