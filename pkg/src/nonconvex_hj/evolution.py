"""Time-dependent solvers for the oscillatory and the homogenized equations.

Both equations are marched with the same explicit monotone scheme::

    u_i^{n+1} = u_i^n - dt * (G(D^- u_i, D^+ u_i) + V(x_i / eps))

where ``G`` is the exact Godunov flux of :mod:`nonconvex_hj.schemes`.  The
oscillatory run uses ``H`` with the potential frozen at grid nodes and the
homogenized run uses a tabulated ``Hbar`` with no potential, so both share the
same scheme bias.  The computational grid extends the window of interest
by the numerical domain of dependence (one cell per step), so the window
values do not depend on the boundary closure at all.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .schemes import TabulatedFlux, godunov

CFL = 0.45


class EvolutionError(ValueError):
    """Invalid evolution setup (bad step, insufficient padding, bad data)."""


# ---------------------------------------------------------------------------
# initial data


def cone(x):
    """``max(0, 1 - |x|)``."""
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(x, float)))


def sinusoid(amplitude: float = 1.0, wavelength: float = 2.0) -> Callable:
    w = 2.0 * math.pi / wavelength
    return lambda x: amplitude * np.sin(w * np.asarray(x, float))


def plane_wave(p: float, c: float = 0.0) -> Callable:
    return lambda x: p * np.asarray(x, float) + c


def initial_data_from_dict(spec: dict) -> Callable:
    kind = spec.get("kind", "cone")
    if kind == "cone":
        return cone
    if kind == "sinusoid":
        return sinusoid(float(spec.get("amplitude", 1.0)), float(spec.get("wavelength", 2.0)))
    if kind == "plane_wave":
        return plane_wave(float(spec["p"]), float(spec.get("c", 0.0)))
    raise EvolutionError(f"unknown initial data kind {kind!r}")


# ---------------------------------------------------------------------------
# solution container


@dataclass
class EvolutionSolution:
    """Snapshots of a run restricted to the window of interest.

    ``values[j]`` is the solution at ``times[j]`` on the nodes ``x``.
    ``eps`` is ``None`` for a homogenized run.
    """

    x: np.ndarray
    times: np.ndarray
    values: np.ndarray
    h: float
    dt: float
    domain: tuple[float, float]
    T: float
    padding: float
    eps: float | None
    scheme: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return "homogenized" if self.eps is None else f"eps={self.eps:g}"

    @property
    def cfl_number(self) -> float:
        return self.dt * self.scheme["lipschitz"] / self.h

    def at(self, x, j: int) -> np.ndarray:
        """Linear interpolation of snapshot ``j`` at points ``x``."""
        return np.interp(np.asarray(x, float), self.x, self.values[j])

    def slopes(self) -> np.ndarray:
        """Forward differences of every snapshot."""
        return np.diff(self.values, axis=1) / self.h

    def sup_difference(self, other: "EvolutionSolution") -> float:
        """``sup |u - w|`` over this grid's nodes and the shared snapshot times."""
        if len(self.times) != len(other.times) or not np.allclose(self.times, other.times, atol=1e-12):
            raise EvolutionError("snapshot times differ")
        return float(max(np.max(np.abs(self.values[j] - other.at(self.x, j)))
                         for j in range(len(self.times))))

    def rows(self):
        for j, t in enumerate(self.times):
            for xi, ui in zip(self.x, self.values[j]):
                yield float(xi), float(t), float(ui)

    def to_csv(self, path, tile: int | None = None) -> list[Path]:
        """Write ``x,t,u`` rows; with ``tile`` the x-range is split into files of that many nodes."""
        path = Path(path)
        chunks = [slice(0, len(self.x))] if not tile else [
            slice(s, min(s + tile, len(self.x))) for s in range(0, len(self.x), tile)]
        out = []
        for k, sl in enumerate(chunks):
            fname = path if len(chunks) == 1 else path.with_name(f"{path.stem}_tile{k}{path.suffix}")
            with open(fname, "w") as fh:
                fh.write("x,t,u\n")
                for j, t in enumerate(self.times):
                    for xi, ui in zip(self.x[sl], self.values[j][sl]):
                        fh.write(f"{xi:.12g},{t:.12g},{ui:.15g}\n")
            out.append(fname)
        return out

    def summary(self) -> dict:
        return {"label": self.label, "h": self.h, "dt": self.dt, "domain": list(self.domain),
                "T": self.T, "padding": self.padding, "n_steps": self.scheme.get("n_steps"),
                "cfl": self.cfl_number, "scheme": self.scheme}


# ---------------------------------------------------------------------------
# the march


def _march(flux, potential: Callable | None, g: Callable, T: float, domain, h: float,
           n_snapshots: int, padding: float | None, eps: float | None, meta: dict) -> EvolutionSolution:
    a, b = map(float, domain)
    if not (h > 0 and T >= 0 and b > a):
        raise EvolutionError("need h > 0, T >= 0 and a nonempty domain")
    lip = float(flux.lipschitz_bound)
    n_snap = max(int(n_snapshots), 1)
    n_steps = max(math.ceil(T * lip / (CFL * h) - 1e-9), 1) if T > 0 else 0
    n_steps = n_snap * math.ceil(n_steps / n_snap) if n_steps else 0
    dt = T / n_steps if n_steps else 0.0
    cone_width = 1.1 * T * lip
    if padding is None:
        pad_cells = n_steps + 2
    else:
        if padding < cone_width:
            raise EvolutionError(
                f"insufficient padding {padding:g}: the characteristic cone needs {cone_width:g}")
        pad_cells = math.ceil(padding / h)
    n_win = int(round((b - a) / h))
    if abs(a + n_win * h - b) > 1e-9 * max(1.0, abs(b)):
        raise EvolutionError("window length must be a multiple of h")
    x = a + h * np.arange(-pad_cells, n_win + pad_cells + 1)
    win = slice(pad_cells, pad_cells + n_win + 1)
    u = np.asarray(g(x), float).copy()
    if u.shape != x.shape or not np.all(np.isfinite(u)):
        raise EvolutionError("initial data must be finite on the padded domain")
    vx = np.zeros_like(x) if potential is None else np.asarray(potential(x / eps), float)
    stride = n_steps // n_snap if n_steps else 0
    times, snaps = [0.0], [u[win].copy()]
    ue = np.empty(len(u) + 2)
    for n in range(1, n_steps + 1):
        ue[1:-1] = u
        ue[0], ue[-1] = u[0], u[-1]  # Neumann ghosts; outside the window's numerical cone
        d = np.diff(ue) / h
        u = u - dt * (godunov(flux, d[:-1], d[1:]) + vx)
        if n % stride == 0:
            times.append(n * dt)
            snaps.append(u[win].copy())
    meta = dict(meta, lipschitz=lip, n_steps=n_steps, cfl_target=CFL, boundary="neumann",
                n_padded=len(x))
    return EvolutionSolution(x[win].copy(), np.array(times), np.array(snaps), h, dt, (a, b), T,
                             pad_cells * h, eps, meta)


def solve_oscillatory(H, model, eps: float, g: Callable, T: float, domain=(-1.0, 1.0),
                      h: float | None = None, n_snapshots: int = 16,
                      padding: float | None = None) -> EvolutionSolution:
    """March ``u_t + H(u_x) + V(x/eps) = 0`` from ``u(x, 0) = g(x)``.

    ``model`` is any callable potential (``None`` means ``V = 0``).  The
    default step is ``eps / 32``; coarser steps are rejected.
    """
    if not eps > 0:
        raise EvolutionError("eps must be positive")
    h = eps / 32 if h is None else float(h)
    if h > eps / 32 * (1 + 1e-12):
        raise EvolutionError("the oscillatory run needs h <= eps / 32")
    name = "none" if model is None else type(model).__name__
    return _march(H, model, g, T, domain, h, n_snapshots, padding, eps,
                  {"equation": "oscillatory", "potential": name,
                   "seed": getattr(model, "seed", None)})


def tabulate_curve(curve, p_lo: float, p_hi: float, resolution: float = 1e-3) -> TabulatedFlux:
    """Sample ``curve`` on ``[p_lo, p_hi]`` with spacing at most ``resolution``."""
    n = max(math.ceil((p_hi - p_lo) / resolution), 2)
    p = np.linspace(p_lo, p_hi, n + 1)
    return TabulatedFlux(p, np.asarray(curve(p), float))


def reachable_slopes(g: Callable, domain, h: float, margin: float = 1.0) -> tuple[float, float]:
    """Slope range of ``g`` on a padded sample of the domain, widened by ``margin``."""
    a, b = domain
    w = b - a
    x = np.linspace(a - w, b + w, max(int(3 * w / h), 16) + 1)
    s = np.diff(np.asarray(g(x), float)) / np.diff(x)
    return float(np.min(s)) - margin, float(np.max(s)) + margin


def solve_homogenized(curve, g: Callable, T: float, domain=(-1.0, 1.0), h: float = 1.0 / 256,
                      n_snapshots: int = 16, padding: float | None = None,
                      resolution: float = 1e-3) -> EvolutionSolution:
    """March ``u_t + Hbar(u_x) = 0`` with ``Hbar`` tabulated from ``curve``."""
    lo, hi = reachable_slopes(g, domain, h)
    flux = tabulate_curve(curve, lo, hi, resolution)
    return _march(flux, None, g, T, domain, float(h), n_snapshots, padding, None,
                  {"equation": "homogenized", "table": [lo, hi, resolution]})


# ---------------------------------------------------------------------------
# convergence study


def value_bound(H, g: Callable, T: float, domain, h: float, mbar: float) -> float:
    """``||g||_inf + T (max |H| over the slopes of g + mbar)`` on the sampled domain."""
    lo, hi = reachable_slopes(g, domain, h, margin=0.0)
    a, b = domain
    x = np.linspace(a, b, 1001)
    hmax = max(abs(float(H.range_max(np.array([lo]), np.array([hi]))[0])),
               abs(float(H.range_min(np.array([lo]), np.array([hi]))[0])))
    return float(np.max(np.abs(g(x)))) + T * (hmax + mbar)


def _parallel_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def convergence_report(H, model, curve, g: Callable = cone, T: float | None = None,
                       window_k: float = 1.0, eps_list: Sequence[float] = (0.2, 0.1, 0.05),
                       h_rule: dict | None = None, workers: int = 1) -> dict:
    """Sup-norm errors between oscillatory and homogenized runs on ``[-k, k] x [0, k]``.

    Each error comes with a slack: the change of the error itself when both
    runs are repeated with ``h/2``.  The field-wise refinement deltas of the
    two solutions are reported as well; they are dominated by the kinks of
    ``g``, which both runs share, and so overstate the uncertainty of the error.
    ``monotone`` asks ``err_{i+1} <= err_i + slack_i + slack_{i+1}`` and
    ``strictly_decreasing`` asks ``err_{i+1} < err_i - slack_i - slack_{i+1}``.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise EvolutionError("eps_list must be decreasing")
    rule = {"oscillatory": 1.0 / 32, "homogenized": 1.0 / 256}
    rule.update(h_rule or {})
    k = float(window_k)
    T = k if T is None else float(T)
    dom = (-k, k)
    hh = rule["homogenized"]

    def hom(step):
        return solve_homogenized(curve, g, T, dom, step)

    def osc(args):
        eps, step = args
        return solve_oscillatory(H, model, eps, g, T, dom, step)

    tasks = [("hom", hh), ("hom", hh / 2)] + [
        ("osc", (e, rule["oscillatory"] * e)) for e in eps_list] + [
        ("osc", (e, rule["oscillatory"] * e / 2)) for e in eps_list]
    sols = _parallel_map(lambda t: hom(t[1]) if t[0] == "hom" else osc(t[1]), tasks, workers)
    u_h, u_h2 = sols[0], sols[1]
    osc1, osc2 = sols[2:2 + len(eps_list)], sols[2 + len(eps_list):]
    hom_delta = u_h.sup_difference(u_h2)
    rows = []
    for e, s1, s2 in zip(eps_list, osc1, osc2):
        err, err_fine = s1.sup_difference(u_h), s2.sup_difference(u_h2)
        rows.append({"eps": e, "h": s1.h, "error": err, "error_refined": err_fine,
                     "slack": abs(err - err_fine),
                     "osc_refinement_delta": s1.sup_difference(s2),
                     "hom_refinement_delta": hom_delta,
                     "n_steps": s1.scheme["n_steps"]})
    errs = [r["error"] for r in rows]
    slack = [r["slack"] for r in rows]
    pairs = list(zip(range(len(rows)), range(1, len(rows))))
    bound = value_bound(H, g, T, dom, hh, float(getattr(model, "mbar", 0.0) or 0.0))
    in_bound = all(float(np.max(np.abs(s.values))) <= bound + 1e-9 for s in osc1)
    return {
        "model": model.to_dict() if hasattr(model, "to_dict") else None,
        "window_k": k, "T": T, "h_rule": rule, "rows": rows,
        "monotone": all(errs[j] <= errs[i] + slack[i] + slack[j] for i, j in pairs),
        "strictly_decreasing": all(errs[j] < errs[i] - slack[i] - slack[j] for i, j in pairs),
        "value_bound": bound, "within_value_bound": in_bound,
    }


def multi_seed_report(H, models: Sequence, curve, workers: int = 1, **kwargs) -> dict:
    """Run :func:`convergence_report` per model (typically per seed) and summarize the spread."""
    reports = _parallel_map(lambda m: convergence_report(H, m, curve, **kwargs), list(models), workers)
    errs = np.array([[r["error"] for r in rep["rows"]] for rep in reports])
    return {
        "reports": reports,
        "seeds": [getattr(m, "seed", None) for m in models],
        "error_mean": errs.mean(axis=0).tolist(),
        "error_spread": (errs.max(axis=0) - errs.min(axis=0)).tolist(),
        "all_strictly_decreasing": all(r["strictly_decreasing"] for r in reports),
        "all_monotone": all(r["monotone"] for r in reports),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=float)
