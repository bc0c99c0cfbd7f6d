"""Stationary potentials ``V <= 0`` with oscillation ``mbar = -ess inf V``.

Three models are provided:

* :class:`PeriodicAnalytic` - a deterministic period-1 function (closed form or
  periodic table), e.g. the cosine well ``-(mbar/2)(1 - cos 2 pi y)``;
* :class:`RandomPhase` - a periodic base shifted by a uniform random phase;
* :class:`BlockRandom` - one smooth bump per unit cell with i.i.d. depths.

Expectations ``E[g(V(0))]`` are period averages (Gauss-Legendre quadrature) for
the periodic models and spatial averages with a standard error for
``BlockRandom``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import convolve1d
from scipy.optimize import brentq, minimize_scalar

GL_NODES = 256
TANGENT_TOL = 1e-8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)


class PotentialError(ValueError):
    pass


class WindowUnderResolvedError(PotentialError):
    """The sampled window does not realize the oscillation range."""


def gauss_legendre(fn: Callable, a: float, b: float) -> float:
    """``int_a^b fn`` with the fixed 256-node rule (``fn`` is vectorized)."""
    if b <= a:
        return 0.0
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    return float(0.5 * (b - a) * np.dot(_GL_W, fn(x)))


def gauss_legendre_batch(fn: Callable, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized ``int_{a_i}^{b_i} fn`` over many intervals at once."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0:
        return np.zeros(0)
    x = 0.5 * (b - a)[:, None] * _GL_X[None, :] + 0.5 * (a + b)[:, None]
    return 0.5 * (b - a) * (fn(x) @ _GL_W)


# --- paths --------------------------------------------------------------------

@dataclass
class PotentialPath:
    """A sampled realization of ``V`` on ``[y_lo, y_hi]``.

    For periodic paths the window is one period and ``values`` excludes the
    right endpoint.  ``func`` (when present) is the exact vectorized function;
    otherwise values are linearly interpolated.
    """

    y_lo: float
    y_hi: float
    h: float
    values: np.ndarray
    seed: int | None = None
    periodic: bool = False
    func: Callable | None = None
    mbar: float = 0.0
    shift: float = 0.0
    mollification_width: float = 0.0
    sup_change: float = 0.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def grid(self) -> np.ndarray:
        return self.y_lo + self.h * np.arange(len(self.values))

    @property
    def length(self) -> float:
        return self.y_hi - self.y_lo

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.func is not None:
            return self.func(y)
        g = self.grid
        if self.periodic:
            yy = self.y_lo + np.mod(y - self.y_lo, self.length)
            gx = np.append(g, self.y_hi)
            gv = np.append(self.values, self.values[0])
            return np.interp(yy, gx, gv)
        return np.interp(y, g, self.values)

    def check_range(self, range_tol: float) -> None:
        lo, hi = float(np.min(self.values)), float(np.max(self.values))
        if lo > -self.mbar + range_tol or hi < -range_tol:
            raise WindowUnderResolvedError(
                f"window under-resolves oscillation: sampled range [{lo:.4g}, {hi:.4g}] "
                f"vs [-{self.mbar:.4g}, 0] with range_tol={range_tol:g}")

    def _fine(self):
        g = self.grid
        if self.periodic:
            return np.append(g, self.y_hi), np.append(self.values, self.values[0])
        return g, self.values

    def extrema(self) -> list[tuple[float, float, str]]:
        """Interior local extrema ``(y, V(y), "max"|"min")`` in window order.

        For periodic paths the search is cyclic and every point lies in ``[y_lo, y_hi)``.
        The result is cached; paths are treated as immutable once built.
        """
        if "extrema" not in self._cache:
            self._cache["extrema"] = self._find_extrema()
        return list(self._cache["extrema"])

    def _find_extrema(self) -> list[tuple[float, float, str]]:
        v = np.asarray(self.values)
        n = len(v)
        out = []
        if self.periodic:
            prev, nxt = np.roll(v, 1), np.roll(v, -1)
            idx = range(n)
        else:
            prev, nxt = np.r_[np.inf, v[:-1]], np.r_[v[1:], np.inf]
            idx = range(1, n - 1)
        for i in idx:
            for kind, sgn in (("max", -1.0), ("min", 1.0)):
                c = sgn * v[i]
                if c < sgn * prev[i] and c <= sgn * nxt[i] or c <= sgn * prev[i] and c < sgn * nxt[i]:
                    y0 = self.y_lo + i * self.h
                    if self.func is not None:
                        res = minimize_scalar(lambda x: sgn * float(self.func(np.array(x))),
                                              bounds=(y0 - self.h, y0 + self.h), method="bounded",
                                              options={"xatol": 1e-13})
                        y, val = float(res.x), float(self.func(np.array(res.x)))
                        if sgn * val > c:
                            y, val = y0, float(v[i])
                    else:
                        y, val = y0, float(v[i])
                    if self.periodic:
                        y = self.y_lo + (y - self.y_lo) % self.length
                        if self.length - (y - self.y_lo) < 1e-7:
                            y = self.y_lo
                    out.append((y, val, kind))
        out.sort()
        return out

    def to_csv(self, fname) -> None:
        np.savetxt(fname, np.column_stack([self.grid, self.values]), delimiter=",",
                   header="y,value", comments="")


def level_crossings(path: PotentialPath, c: float) -> np.ndarray:
    """Sign-change points of ``V - c`` in the window, refined to ``1e-10 h``.

    Tangential touches (no sign change) are excluded.  For periodic paths the
    points lie in ``[y_lo, y_hi)``.
    """
    g, v = path._fine()
    d = v - c
    s = np.sign(d)
    # carry signs across exact zeros so that a touch-and-return is not a crossing
    nz = np.flatnonzero(s != 0)
    if nz.size == 0:
        return np.zeros(0)
    out = []
    for i0, i1 in zip(nz[:-1], nz[1:]):
        if s[i0] != s[i1]:
            a, b = g[i0], g[i1]
            if i1 - i0 > 1:
                out.append(0.5 * (g[i0 + 1] + g[i1 - 1]))
                continue
            f = lambda y: float(path(np.array(y))) - c
            fa, fb = f(a), f(b)
            if fa == 0.0:
                out.append(a)
            elif fb == 0.0:
                out.append(b)
            elif fa * fb < 0:
                out.append(brentq(f, a, b, xtol=1e-10 * path.h, rtol=4 * np.finfo(float).eps))
            else:
                out.append(a if abs(fa) < abs(fb) else b)
    if path.periodic:
        out = [path.y_lo + (y - path.y_lo) % path.length for y in out]
        out = sorted(set(out))
    return np.asarray(out, dtype=float)


def mollify(path: PotentialPath, eps_m: float) -> PotentialPath:
    """Convolve with the discrete kernel ``exp(-x^2/eps_m)`` (weights summing to 1).

    The result is shifted so that its maximum is 0.  The shift and the sup-norm
    change are recorded on the returned path.
    """
    if eps_m <= 0:
        raise PotentialError("mollification width must be positive")
    half = max(1, int(math.ceil(6.0 * math.sqrt(eps_m / 2.0) / path.h)))
    x = path.h * np.arange(-half, half + 1)
    k = np.exp(-x ** 2 / eps_m)
    k /= k.sum()
    mode = "wrap" if path.periodic else "nearest"
    vals = convolve1d(np.asarray(path.values, float), k, mode=mode)
    shift = -float(np.max(vals))
    vals = vals + shift
    out = PotentialPath(path.y_lo, path.y_hi, path.h, vals, seed=path.seed, periodic=path.periodic,
                        func=None, mbar=-float(np.min(vals)), shift=shift,
                        mollification_width=eps_m,
                        sup_change=float(np.max(np.abs(vals - path.values))))
    return out


# --- models -------------------------------------------------------------------

class PotentialModel:
    """Base class.  Subclasses set ``mbar`` and implement sampling and expectation."""

    mbar: float
    periodic: bool = False

    def sample_path(self, seed: int | None = None, window: tuple[float, float] | None = None,
                    h: float = 1e-3, range_tol: float | None = None) -> PotentialPath:
        raise NotImplementedError

    def expected_functional(self, g: Callable, kink_levels: Iterable[float] = ()) -> float:
        raise NotImplementedError

    def expected_functional_se(self, g: Callable, kink_levels: Iterable[float] = ()) -> tuple[float, float]:
        return self.expected_functional(g, kink_levels), 0.0

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(spec: dict) -> "PotentialModel":
        v = spec["variant"]
        if v == "cosine":
            return PeriodicAnalytic.cosine(float(spec.get("mbar", 1.0)))
        if v == "table":
            return PeriodicAnalytic.from_table(spec["values"])
        if v == "random_phase":
            base = PotentialModel.from_dict(spec.get("base", {"variant": "cosine", "mbar": 1.0}))
            return RandomPhase(base, int(spec.get("seed", 0)))
        if v == "block_random":
            a, b = spec.get("depth_dist", {"uniform": [0.5, 1.0]})["uniform"]
            return BlockRandom(float(a), float(b), int(spec.get("seed", 0)),
                               width=float(spec.get("width", 1.0)),
                               n_cells=int(spec.get("n_cells", 1000)))
        raise PotentialError(f"unknown potential variant {v!r}")


class PeriodicAnalytic(PotentialModel):
    """Deterministic period-1 potential with ``max V = 0`` and ``min V = -mbar``."""

    periodic = True

    def __init__(self, func: Callable, mbar: float | None = None, name: str = "custom",
                 check: bool = True, meta: dict | None = None):
        self.func = func
        self.name = name
        self.meta = meta or {}
        y = np.linspace(0.0, 1.0, 20001)
        v = func(y)
        lo, hi = float(np.min(v)), float(np.max(v))
        self.mbar = -lo if mbar is None else float(mbar)
        if check and (abs(hi) > 1e-6 or abs(lo + self.mbar) > 1e-6 * max(1.0, self.mbar)):
            raise PotentialError(f"potential must satisfy max V = 0, min V = -mbar (got [{lo}, {hi}])")
        if self.mbar <= 0:
            raise PotentialError("oscillation must be positive")
        self._cache: dict = {}

    @classmethod
    def cosine(cls, mbar: float = 1.0) -> "PeriodicAnalytic":
        f = lambda y: -(mbar / 2.0) * (1.0 - np.cos(2.0 * np.pi * np.asarray(y, float)))
        return cls(f, mbar, name="cosine", meta={"mbar": mbar})

    @classmethod
    def from_table(cls, values: Sequence[float]) -> "PeriodicAnalytic":
        """Periodic cubic spline through equispaced samples on ``[0, 1)``; renormalized."""
        v = np.asarray(values, float)
        y = np.linspace(0.0, 1.0, len(v) + 1)
        cs = CubicSpline(y, np.append(v, v[0]), bc_type="periodic")
        fine = cs(np.linspace(0, 1, 20001))
        top, bot = float(np.max(fine)), float(np.min(fine))
        f = lambda yy: cs(np.mod(np.asarray(yy, float), 1.0)) - top
        return cls(f, top - bot, name="table", meta={"values": list(map(float, v))})

    def __call__(self, y):
        return self.func(np.asarray(y, float))

    def period_path(self, h: float = 1e-3) -> PotentialPath:
        n = int(round(1.0 / h))
        key = ("path", n)
        if key not in self._cache:
            g = np.arange(n) / n
            self._cache[key] = PotentialPath(0.0, 1.0, 1.0 / n, self.func(g), periodic=True,
                                             func=self.func, mbar=self.mbar)
        return self._cache[key]

    def sample_path(self, seed=None, window=None, h=1e-3, range_tol=None):
        if window is None:
            return self.period_path(h)
        lo, hi = window
        n = int(round((hi - lo) / h))
        g = lo + h * np.arange(n + 1)
        p = PotentialPath(lo, hi, h, self.func(g), seed=seed, func=self.func, mbar=self.mbar)
        p.check_range(0.02 * self.mbar if range_tol is None else range_tol)
        return p

    def crossings(self, c: float) -> np.ndarray:
        return level_crossings(self.period_path(), c)

    def extrema(self) -> list[tuple[float, float, str]]:
        key = "extrema"
        if key not in self._cache:
            self._cache[key] = self.period_path().extrema()
        return self._cache[key]

    def period_split_points(self, levels: Iterable[float]) -> np.ndarray:
        pts = [0.0, 1.0]
        for c in levels:
            if -self.mbar < c < 0:
                pts.extend(self.crossings(c).tolist())
        return np.unique(np.asarray(pts))

    def expected_functional(self, g, kink_levels=()):
        pts = self.period_split_points(kink_levels)
        fn = lambda y: g(self.func(y))
        return float(np.sum(gauss_legendre_batch(fn, pts[:-1], pts[1:])))

    def reflected(self) -> "PeriodicAnalytic":
        """The model of ``y -> V(-y)``."""
        if self.name == "cosine":
            return self
        f = self.func
        return PeriodicAnalytic(lambda y: f(-np.asarray(y, float)), self.mbar, name="reflected", check=False)

    def to_dict(self):
        if self.name == "cosine":
            return {"variant": "cosine", "mbar": self.mbar}
        if self.name == "table":
            return {"variant": "table", "values": self.meta["values"]}
        raise PotentialError("custom potentials are not serializable")


class RandomPhase(PotentialModel):
    """``V(y) = base(y + theta)`` with ``theta ~ U[0, 1)`` drawn from the seed."""

    periodic = True

    def __init__(self, base: PeriodicAnalytic, seed: int = 0):
        if not isinstance(base, PeriodicAnalytic):
            raise PotentialError("random phase needs a periodic base")
        self.base = base
        self.seed = int(seed)
        self.theta = float(np.random.default_rng(self.seed).uniform())
        self.mbar = base.mbar
        th = self.theta
        self.func = lambda y: base.func(np.asarray(y, float) + th)
        self._periodic = PeriodicAnalytic(self.func, self.mbar, name="shifted", check=False)

    def __call__(self, y):
        return self.func(y)

    def period_path(self, h: float = 1e-3) -> PotentialPath:
        p = self._periodic.period_path(h)
        p.seed = self.seed
        return p

    def sample_path(self, seed=None, window=None, h=1e-3, range_tol=None):
        if seed is not None and int(seed) != self.seed:
            return RandomPhase(self.base, seed).sample_path(None, window, h, range_tol)
        if window is None:
            return self.period_path(h)
        p = self._periodic.sample_path(None, window, h, range_tol)
        p.seed = self.seed
        return p

    def crossings(self, c):
        return self._periodic.crossings(c)

    def extrema(self):
        return self._periodic.extrema()

    def reflected(self) -> PeriodicAnalytic:
        f = self.func
        return PeriodicAnalytic(lambda y: f(-np.asarray(y, float)), self.mbar, name="reflected", check=False)

    def expected_functional(self, g, kink_levels=()):
        # stationarity: the phase does not change the period average
        return self.base.expected_functional(g, kink_levels)

    def to_dict(self):
        return {"variant": "random_phase", "base": self.base.to_dict(), "seed": self.seed}


def standard_bump(t):
    """``B(t) = e * exp(-1/(1-(2t-1)^2))`` on ``(0, 1)``, zero elsewhere; ``max B = B(1/2) = 1``."""
    t = np.asarray(t, float)
    z = 2.0 * t - 1.0
    inside = np.abs(z) < 1.0
    out = np.zeros_like(t)
    zi = z[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - zi * zi))
    return out


class BlockRandom(PotentialModel):
    """``V(y) = -d_i B((y - i - (1-w)/2)/w)`` on cell ``[i, i+1)`` with ``d_i ~ U[a, b]`` i.i.d.

    ``mbar = b`` (the essential supremum of the depth law).  Realizations are
    aperiodic, so expectations are spatial averages over ``n_cells`` cells.
    """

    periodic = False
    _BLOCK = 4096

    def __init__(self, a: float, b: float, seed: int = 0, width: float = 1.0, n_cells: int = 1000):
        if not 0 < a <= b:
            raise PotentialError("depth law must satisfy 0 < a <= b")
        if not 0 < width <= 1:
            raise PotentialError("bump width must lie in (0, 1]")
        self.a, self.b, self.seed, self.width, self.n_cells = a, b, int(seed), width, n_cells
        self.mbar = b

    def reflected(self) -> "BlockRandom":
        # i.i.d. cells with a symmetric bump: the reflected field has the same law
        return self

    def depths(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        out = np.empty(cells.shape)
        blocks = np.floor_divide(cells, self._BLOCK)
        for blk in np.unique(blocks):
            rng = np.random.default_rng([self.seed, int(blk) + (1 << 40)])
            d = rng.uniform(self.a, self.b, self._BLOCK)
            m = blocks == blk
            out[m] = d[cells[m] - blk * self._BLOCK]
        return out

    def bump(self, t):
        w = self.width
        return standard_bump((np.asarray(t, float) - 0.5 * (1.0 - w)) / w)

    def __call__(self, y):
        y = np.asarray(y, float)
        cell = np.floor(y)
        return -self.depths(cell) * self.bump(y - cell)

    def sample_path(self, seed=None, window=None, h=1e-3, range_tol=None):
        if seed is not None and int(seed) != self.seed:
            return BlockRandom(self.a, self.b, seed, self.width, self.n_cells).sample_path(
                None, window, h, range_tol)
        lo, hi = (0.0, float(self.n_cells)) if window is None else window
        n = int(round((hi - lo) / h))
        g = lo + h * np.arange(n + 1)
        p = PotentialPath(lo, hi, h, self(g), seed=self.seed, func=self.__call__, mbar=self.mbar)
        p.check_range(0.02 * self.mbar if range_tol is None else range_tol)
        return p

    def cell_averages(self, g: Callable, n_cells: int | None = None) -> np.ndarray:
        n = self.n_cells if n_cells is None else n_cells
        d = self.depths(np.arange(n))
        w = self.width
        lo, hi = 0.5 * (1 - w), 0.5 * (1 + w)
        x = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
        vals = -d[:, None] * self.bump(x)[None, :]
        inner = 0.5 * (hi - lo) * (g(vals) @ _GL_W)
        return inner + (1.0 - w) * float(g(np.array(0.0)))

    def expected_functional_se(self, g, kink_levels=(), n_cells: int | None = None):
        avg = self.cell_averages(g, n_cells)
        return float(avg.mean()), float(avg.std(ddof=1) / math.sqrt(len(avg)))

    def expected_functional(self, g, kink_levels=()):
        return self.expected_functional_se(g, kink_levels)[0]

    def exact_expectation(self, g: Callable, n_depth: int = 64) -> float:
        """``E_d int_0^1 g(-d B) dt`` by tensor Gauss-Legendre (an ergodic-limit oracle)."""
        xd, wd = np.polynomial.legendre.leggauss(n_depth)
        d = 0.5 * (self.b - self.a) * xd + 0.5 * (self.a + self.b)
        w = self.width
        lo, hi = 0.5 * (1 - w), 0.5 * (1 + w)
        x = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
        vals = -d[:, None] * self.bump(x)[None, :]
        inner = 0.5 * (hi - lo) * (g(vals) @ _GL_W) + (1.0 - w) * float(g(np.array(0.0)))
        if self.b == self.a:
            return float(inner[0])
        return float(0.5 * np.dot(wd, inner))

    def to_dict(self):
        return {"variant": "block_random", "depth_dist": {"uniform": [self.a, self.b]},
                "seed": self.seed, "width": self.width, "n_cells": self.n_cells}


def monotone_crossings(path: PotentialPath, c: float, extrema=None,
                       tangent_tol: float = TANGENT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Crossings of level ``c`` found arc by arc between consecutive extrema.

    Returns ``(crossings, tangents)``: ``crossings`` are transversal solutions of
    ``V(y) = c`` (vectorized bisection to machine precision), ``tangents`` are
    extremum locations whose value lies within ``tangent_tol`` of ``c``.  Levels
    that only graze an extremum are therefore reported as tangent points rather
    than as a pair of nearly coincident crossings.  Periodic output lies in
    ``[y_lo, y_hi)``.
    """
    ext = path.extrema() if extrema is None else extrema
    ys = np.array([e[0] for e in ext], dtype=float)
    vs = np.array([e[1] for e in ext], dtype=float)
    tangents = ys[np.abs(vs - c) <= tangent_tol]
    if path.periodic:
        if len(ys) == 0:
            return np.zeros(0), tangents
        xa, va = ys, vs
        xb, vb = np.append(ys[1:], ys[0] + path.length), np.append(vs[1:], vs[0])
    else:
        ends_y = np.concatenate([[path.y_lo], ys, [path.y_hi]])
        ends_v = np.concatenate([[float(path(np.array(path.y_lo)))], vs, [float(path(np.array(path.y_hi)))]])
        xa, va, xb, vb = ends_y[:-1], ends_v[:-1], ends_y[1:], ends_v[1:]
    lo_v, hi_v = np.minimum(va, vb), np.maximum(va, vb)
    m = (lo_v + tangent_tol < c) & (c < hi_v - tangent_tol)
    if not path.periodic:
        # window ends are not extrema: a crossing there only needs a strict sign change
        m_end = (lo_v < c) & (c < hi_v)
        m[0] = m_end[0]
        m[-1] = m_end[-1]
    x0, x1 = xa[m].copy(), xb[m].copy()
    inc = (vb > va)[m]
    for _ in range(64):
        mid = 0.5 * (x0 + x1)
        below = path(mid) < c
        go_right = np.where(inc, below, ~below)
        x0 = np.where(go_right, mid, x0)
        x1 = np.where(go_right, x1, mid)
    out = 0.5 * (x0 + x1)
    if path.periodic:
        out = path.y_lo + np.mod(out - path.y_lo, path.length)
    return np.sort(out), np.sort(tangents)


def monotone_arcs(path: PotentialPath, extrema=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(ya, yb, va, vb)`` for the arcs between consecutive extrema (cyclic for periodic paths)."""
    ext = path.extrema() if extrema is None else extrema
    ys = np.array([e[0] for e in ext], dtype=float)
    vs = np.array([e[1] for e in ext], dtype=float)
    if path.periodic:
        if len(ys) == 0:
            v0 = float(path(np.array(path.y_lo)))
            return (np.array([path.y_lo]), np.array([path.y_hi]), np.array([v0]), np.array([v0]))
        return ys, np.append(ys[1:], ys[0] + path.length), vs, np.append(vs[1:], vs[0])
    ends_y = np.concatenate([[path.y_lo], ys, [path.y_hi]])
    ends_v = np.asarray(path(ends_y), dtype=float)
    return ends_y[:-1], ends_y[1:], ends_v[:-1], ends_v[1:]


def arc_positions(path: PotentialPath, arcs, levels: np.ndarray) -> np.ndarray:
    """Position on each arc where ``V`` equals ``levels`` (clipped to the arc ends).

    ``levels`` has shape ``(..., n_arcs)``; the result has the same shape.
    """
    ya, yb, va, vb = arcs
    levels = np.asarray(levels, float)
    x0 = np.broadcast_to(ya, levels.shape).copy()
    x1 = np.broadcast_to(yb, levels.shape).copy()
    inc = np.broadcast_to(vb > va, levels.shape)
    lo = np.broadcast_to(np.minimum(va, vb), levels.shape)
    hi = np.broadcast_to(np.maximum(va, vb), levels.shape)
    # levels outside the arc's range land on the nearer end
    below_all = levels <= lo
    above_all = levels >= hi
    for _ in range(60):
        mid = 0.5 * (x0 + x1)
        right = np.where(inc, path(mid) < levels, path(mid) > levels)
        x0 = np.where(right, mid, x0)
        x1 = np.where(right, x1, mid)
    out = 0.5 * (x0 + x1)
    at_start_low = np.where(inc, below_all, above_all)
    at_start_high = np.where(inc, above_all, below_all)
    out = np.where(at_start_low, np.broadcast_to(ya, levels.shape), out)
    out = np.where(at_start_high, np.broadcast_to(yb, levels.shape), out)
    return out


def periodic_expectation_vec(path: PotentialPath, G: Callable, mus, kinks: Sequence[float] = ()) -> np.ndarray:
    """``E[G(mu, V)]`` over one period for every ``mu`` in ``mus`` at once.

    ``G(mu, v)`` must broadcast.  The integrand may be nonsmooth where
    ``mu - V`` equals one of ``kinks``; the period is split at those points
    so the Gauss-Legendre rule stays exact to rounding for piecewise-affine ``G``.
    """
    mus = np.atleast_1d(np.asarray(mus, float))
    arcs = monotone_arcs(path)
    ya, yb = arcs[0], arcs[1]
    nA = len(ya)
    kinks = [float(k) for k in kinks]
    if kinks:
        lv = mus[:, None, None] - np.asarray(kinks)[None, :, None]          # (Q, K, 1)
        lv = np.broadcast_to(lv, (len(mus), len(kinks), nA))
        pos = arc_positions(path, arcs, lv)                                  # (Q, K, nA)
        pts = np.concatenate([np.broadcast_to(ya, (len(mus), 1, nA)), pos,
                              np.broadcast_to(yb, (len(mus), 1, nA))], axis=1)
        pts = np.sort(pts, axis=1)                                           # (Q, K+2, nA)
        a = pts[:, :-1, :].reshape(len(mus), -1)
        b = pts[:, 1:, :].reshape(len(mus), -1)
    else:
        a = np.broadcast_to(ya, (len(mus), nA))
        b = np.broadcast_to(yb, (len(mus), nA))
    x = 0.5 * (b - a)[..., None] * _GL_X + 0.5 * (a + b)[..., None]         # (Q, n, G)
    vals = G(mus[:, None, None], path(x))
    tot = np.sum(0.5 * (b - a) * (vals @ _GL_W), axis=1)
    return tot / path.length
