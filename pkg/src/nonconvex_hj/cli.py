"""Batch command line front end.

Usage::

    python -m nonconvex_hj <command> --config run.json --out results/ [--seed N] [--workers N]

``<command>`` is one of ``effective``, ``cell``, ``evolve``, ``corrector``
and ``compare``.  The config file is JSON (see :data:`CONFIG_SCHEMA`):

.. code-block:: json

    {"hamiltonian": {...}, "potential": {...}, "params": {...}, "seed": 0}

Every artifact is named ``<command>_<hash>.<ext>`` where ``<hash>`` digests
the resolved config (command, specs, parameters with defaults filled in and
the seed), and every JSON artifact embeds that resolved config.  Outputs are
byte-reproducible; wall-clock information goes only to a sidecar ``.log``.

Exit codes: 0 success, 2 invalid config or spec (an error JSON names the
violated invariant), 3 solver failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import cell_solver, corrector, effective, evolution
from .hamiltonian import BranchRangeError, HamiltonianError, PiecewiseMonotoneHamiltonian
from .potential import PotentialError, PotentialModel

COMMANDS = ("effective", "cell", "evolve", "corrector", "compare")

_NUM = {"type": "number"}
_NUM_LIST = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "required": ["hamiltonian", "potential"],
    "properties": {
        "command": {"type": "string", "enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "hamiltonian": {
            "type": "object",
            "required": ["branches", "tail_slope_left", "tail_slope_right"],
            "properties": {
                "branches": {"type": "array", "minItems": 1, "items": {
                    "type": "object",
                    "properties": {
                        "kind": {"type": "string", "enum": ["affine", "table"]},
                        "domain": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                        "slope": _NUM,
                        "value_at_left": _NUM,
                        "p": _NUM_LIST,
                        "H": _NUM_LIST,
                    },
                }},
                "tail_slope_left": _NUM,
                "tail_slope_right": _NUM,
            },
        },
        "potential": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"type": "string",
                            "enum": ["cosine", "table", "random_phase", "block_random"]},
                "mbar": {"type": "number", "exclusiveMinimum": 0},
                "values": _NUM_LIST,
                "seed": {"type": "integer", "minimum": 0},
                "base": {"type": "object"},
                "depth_dist": {"type": "object"},
                "width": _NUM,
                "n_cells": {"type": "integer", "minimum": 1},
            },
        },
        "params": {
            "type": "object",
            "properties": {
                "method": {"type": "string", "enum": ["recursive", "small_osc", "large_osc", "quasiconvex"]},
                "grid": {"type": "object", "properties": {
                    "lo": _NUM, "hi": _NUM, "n": {"type": "integer", "minimum": 2}}},
                "p": _NUM_LIST,
                "lambdas": _NUM_LIST,
                "h": {"type": ["number", "null"]},
                "eps": {"type": ["number", "null"]},
                "eps_list": _NUM_LIST,
                "initial": {"type": "object"},
                "T": _NUM,
                "window_k": {"type": "number", "exclusiveMinimum": 0},
                "n_snapshots": {"type": "integer", "minimum": 1},
                "tile": {"type": ["integer", "null"]},
                "mu": _NUM_LIST,
                "kind": {"type": "string", "enum": ["sup", "inf", "both"]},
                "samples": {"type": "integer", "minimum": 2},
                "convergence": {"type": "boolean"},
            },
        },
    },
}

DEFAULT_PARAMS: dict[str, dict] = {
    "effective": {"method": "recursive", "grid": {"lo": -3.0, "hi": 5.0, "n": 801}},
    "cell": {"p": [0.0], "lambdas": list(cell_solver.DEFAULT_LAMBDAS), "h": None},
    "evolve": {"eps": 0.05, "initial": {"kind": "cone"}, "T": 1.0, "window_k": 1.0,
               "h": None, "n_snapshots": 16, "tile": None},
    "corrector": {"mu": [0.5], "kind": "both", "h": 1e-3, "samples": 2001},
    "compare": {"p": [-1.0, 0.5, 1.5, 2.0, 3.0], "lambdas": [1e-2, 3e-3], "h": None,
                "convergence": False, "eps_list": [0.2, 0.1, 0.05],
                "initial": {"kind": "cone"}, "window_k": 1.0},
}


class ConfigError(ValueError):
    """Config rejected; ``invariant`` names the violated rule."""

    def __init__(self, invariant: str, message: str):
        super().__init__(message)
        self.invariant = invariant


# ---------------------------------------------------------------------------
# validation


_TYPES = {"object": dict, "array": list, "string": str, "boolean": bool, "null": type(None)}


def _type_ok(value, t: str) -> bool:
    if t == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool) and np.isfinite(value)
    if t == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, _TYPES[t])


def validate(value, schema: dict = CONFIG_SCHEMA, where: str = "config") -> None:
    """Check ``value`` against the subset of JSON Schema used by :data:`CONFIG_SCHEMA`."""
    types = schema.get("type")
    if types is not None:
        types = [types] if isinstance(types, str) else types
        if not any(_type_ok(value, t) for t in types):
            raise ConfigError("schema", f"{where}: expected {' or '.join(types)}, got {type(value).__name__}")
    if "enum" in schema and value not in schema["enum"]:
        raise ConfigError("schema", f"{where}: {value!r} not in {schema['enum']}")
    if _type_ok(value, "number"):
        if "minimum" in schema and value < schema["minimum"]:
            raise ConfigError("schema", f"{where}: {value} < {schema['minimum']}")
        if "exclusiveMinimum" in schema and value <= schema["exclusiveMinimum"]:
            raise ConfigError("schema", f"{where}: {value} <= {schema['exclusiveMinimum']}")
    if isinstance(value, dict):
        for key in schema.get("required", []):
            if key not in value:
                raise ConfigError("schema", f"{where}: missing required key {key!r}")
        for key, sub in schema.get("properties", {}).items():
            if key in value:
                validate(value[key], sub, f"{where}.{key}")
    if isinstance(value, list):
        if len(value) < schema.get("minItems", 0):
            raise ConfigError("schema", f"{where}: needs at least {schema['minItems']} items")
        if "maxItems" in schema and len(value) > schema["maxItems"]:
            raise ConfigError("schema", f"{where}: at most {schema['maxItems']} items")
        for i, item in enumerate(value):
            if "items" in schema:
                validate(item, schema["items"], f"{where}[{i}]")


_HAM_INVARIANTS = (
    ("cover the whole real line", "pieces_cover_real_line"),
    ("not contiguous", "contiguous_domains"),
    ("discontinuous", "continuity"),
    ("not coercive", "coercivity"),
    ("not strictly monotone", "strict_monotonicity"),
    ("flat affine piece", "strict_monotonicity"),
    ("empty piece", "nonempty_domains"),
    ("not distinct", "distinct_critical_values"),
    ("must be positive", "positive_critical_values"),
    ("min H = H(0) = 0", "normalization"),
    ("unknown branch kind", "schema"),
)


def classify(exc: Exception) -> str:
    """Invariant name for a spec validation error."""
    if isinstance(exc, ConfigError):
        return exc.invariant
    msg = str(exc)
    if isinstance(exc, HamiltonianError):
        for key, name in _HAM_INVARIANTS:
            if key in msg:
                return name
        return "hamiltonian"
    if isinstance(exc, PotentialError):
        if "max V = 0" in msg:
            return "potential_range"
        if "variant" in msg:
            return "schema"
        return "potential"
    if isinstance(exc, BranchRangeError):
        return "branch_range"
    return "config"


# ---------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    """Fully resolved run description; serializable and hashable."""

    command: str
    hamiltonian: dict
    potential: dict
    params: dict
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict, command: str | None = None, seed: int | None = None) -> "RunConfig":
        validate(raw)
        cmd = command or raw.get("command")
        if cmd not in COMMANDS:
            raise ConfigError("schema", f"unknown or missing command {cmd!r}")
        if raw.get("command") not in (None, cmd):
            raise ConfigError("schema", f"config is for {raw['command']!r}, not {cmd!r}")
        s = int(raw.get("seed", 0) if seed is None else seed)
        if s < 0:
            raise ConfigError("schema", "seed must be nonnegative")
        params = copy.deepcopy(DEFAULT_PARAMS[cmd])
        params.update(copy.deepcopy(raw.get("params", {})))
        pot = copy.deepcopy(raw["potential"])
        if pot["variant"] in ("random_phase", "block_random"):
            pot.setdefault("seed", s)
        return cls(cmd, copy.deepcopy(raw["hamiltonian"]), pot, params, s)

    def to_dict(self) -> dict:
        return {"command": self.command, "hamiltonian": self.hamiltonian,
                "potential": self.potential, "params": self.params, "seed": self.seed}

    @property
    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def build(self) -> tuple[PiecewiseMonotoneHamiltonian, Any]:
        return (PiecewiseMonotoneHamiltonian.from_dict(self.hamiltonian),
                PotentialModel.from_dict(self.potential))


# ---------------------------------------------------------------------------
# commands


def _curve(H, model, method: str):
    if method == "recursive":
        return effective.effective_hamiltonian(H, model)
    H.check_normalized()
    fn = {"small_osc": effective.effective_small_osc, "large_osc": effective.effective_large_osc,
          "quasiconvex": effective.effective_quasiconvex}[method]
    return fn(H, model)


def _formula_curve(H, model):
    """The direct formula that applies to ``(H, model)``, or ``None`` when only the recursion applies."""
    H0, p_star, e_star = H.normalized()
    H0.check_normalized()
    if H0.L == 0 and H0.L_left == 0:
        c = effective.effective_quasiconvex(H0, model)
    elif H0.L_left == 0 and model.mbar < effective.small_oscillation_bound(H0):
        c = effective.effective_small_osc(H0, model)
    elif H0.L_left == 0 and model.mbar >= H0.critical_values().gap:
        c = effective.effective_large_osc(H0, model)
    else:
        return None
    return c.shifted(p_star, e_star) if (p_star or e_star) else c


def _cell_task(args) -> dict:
    ham, pot, p, lambdas, h, seed = args
    H = PiecewiseMonotoneHamiltonian.from_dict(ham)
    model = PotentialModel.from_dict(pot)
    est = cell_solver.estimate_Hbar(H, model, float(p), lambdas=tuple(lambdas), h=h, seed=seed)
    return est.to_dict()


def _cell_estimates(cfg: RunConfig, ps: Sequence[float], workers: int) -> list[dict]:
    tasks = [(cfg.hamiltonian, cfg.potential, float(p), cfg.params["lambdas"], cfg.params.get("h"), cfg.seed)
             for p in ps]
    if workers <= 1 or len(tasks) <= 1:
        return [_cell_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_task, tasks))


def _fmt(x) -> str:
    return "nan" if x is None else repr(float(x))


def cmd_effective(cfg: RunConfig, H, model, workers: int) -> tuple[list[str], dict, str]:
    prm = cfg.params
    c = _curve(H, model, prm["method"])
    g = prm["grid"]
    grid = np.linspace(float(g["lo"]), float(g["hi"]), int(g["n"]))
    lines = ["p,Hbar,segment_kind,provenance"]
    lines += [f"{_fmt(p)},{_fmt(v)},{k},\"{prov}\"" for p, v, k, prov in c.rows(grid)]
    report = {"breakpoints": c.breakpoints, "segments": c.manifest(),
              "continuity_defect": c.continuity_defect(), "meta": _jsonable(c.meta)}
    plot = "set xlabel 'p'\nset ylabel 'Hbar'\nplot '{csv}' every ::1 using 1:2 with lines title 'Hbar'\n"
    return lines, report, plot


def cmd_cell(cfg: RunConfig, H, model, workers: int):
    ests = _cell_estimates(cfg, cfg.params["p"], workers)
    lines = ["p,lambda,estimate,residual"]
    for e in ests:
        for lam, v, r in zip(e["lambdas"], e["raw"], e["residuals"]):
            lines.append(f"{_fmt(e['p'])},{_fmt(lam)},{_fmt(v)},{_fmt(r)}")
    report = {"estimates": ests, "lower_bound_ok": all(e["lower_bound_ok"] for e in ests)}
    plot = ("set xlabel 'p'\nset ylabel '-lambda v(0)'\n"
            "plot '{csv}' every ::1 using 1:3 with points title 'estimate'\n")
    return lines, report, plot


def cmd_evolve(cfg: RunConfig, H, model, workers: int):
    prm = cfg.params
    g = evolution.initial_data_from_dict(prm["initial"])
    k = float(prm["window_k"])
    dom = (-k, k)
    if prm["eps"] is None:
        c = effective.effective_hamiltonian(H, model)
        sol = evolution.solve_homogenized(c, g, float(prm["T"]), dom,
                                          prm["h"] or 1.0 / 256, int(prm["n_snapshots"]))
    else:
        sol = evolution.solve_oscillatory(H, model, float(prm["eps"]), g, float(prm["T"]), dom,
                                          prm["h"], int(prm["n_snapshots"]))
    lines = ["x,t,u"] + [f"{_fmt(x)},{_fmt(t)},{_fmt(u)}" for x, t, u in sol.rows()]
    report = {"solution": _jsonable(sol.summary()), "sup_abs": float(np.max(np.abs(sol.values)))}
    plot = ("set xlabel 'x'\nset ylabel 'u'\n"
            "plot '{csv}' every ::1 using 1:3:2 with points palette pt 7 ps 0.3 title 'u(x,t)'\n")
    tile = prm.get("tile")
    if tile:
        def tiles(out_dir: Path, stem: str) -> dict[str, Path]:
            files = sol.to_csv(out_dir / f"{stem}_fields.csv", tile=int(tile))
            return {f"tile{k}": p for k, p in enumerate(files)}
        return lines, report, plot, tiles
    return lines, report, plot


def cmd_corrector(cfg: RunConfig, H, model, workers: int):
    prm = cfg.params
    H.check_normalized()
    kinds = ["sup", "inf"] if prm["kind"] == "both" else [prm["kind"]]
    path = corrector._as_path(model, float(prm["h"]))
    lines = ["mu,kind,y,f"]
    out = []
    for mu in prm["mu"]:
        for kind in kinds:
            sel = (corrector.sup_admissible if kind == "sup" else corrector.inf_admissible)(H, path, float(mu))
            fld = sel.field()
            rep = corrector.verify_metric_solution(fld, H)
            y = np.linspace(fld.origin, fld.end, int(prm["samples"]))
            lines += [f"{_fmt(mu)},{kind},{_fmt(a)},{_fmt(b)}" for a, b in zip(y, fld(y))]
            out.append({"mu": float(mu), "kind": kind, "branches": list(sel.branches),
                        "expected_slope": sel.expected(), "verification": rep.to_dict()})
    report = {"selections": out, "all_passed": all(o["verification"]["passed"] for o in out)}
    plot = ("set xlabel 'y'\nset ylabel 'f'\n"
            "plot '{csv}' every ::1 using 3:4 with lines title 'slope fields'\n")
    return lines, report, plot


def cmd_compare(cfg: RunConfig, H, model, workers: int):
    prm = cfg.params
    curve = effective.effective_hamiltonian(H, model)
    formula = _formula_curve(H, model)
    ests = _cell_estimates(cfg, prm["p"], workers)
    lines = ["p,formula,cell,cell_error_bar,curve"]
    triples = []
    for e in ests:
        p = e["p"]
        f = None if formula is None else float(formula(p))
        cv = float(curve(p))
        lines.append(f"{_fmt(p)},{_fmt(f)},{_fmt(e['estimate'])},{_fmt(e['error_bar'])},{_fmt(cv)}")
        triples.append({"p": p, "formula": f, "cell": e["estimate"], "cell_error_bar": e["error_bar"],
                        "curve": cv, "cell_minus_curve": e["estimate"] - cv})
    report: dict = {"triples": triples, "formula": None if formula is None else formula.meta.get("construction"),
                    "max_cell_deviation": max(abs(t["cell_minus_curve"]) for t in triples)}
    if prm["convergence"]:
        g = evolution.initial_data_from_dict(prm["initial"])
        report["convergence"] = evolution.convergence_report(
            H, model, curve, g, window_k=float(prm["window_k"]), eps_list=prm["eps_list"], workers=workers)
    plot = ("set xlabel 'p'\n"
            "plot '{csv}' every ::1 using 1:5 with lines title 'curve', "
            "'' every ::1 using 1:3 with points title 'cell'\n")
    return lines, report, plot


HANDLERS = {"effective": cmd_effective, "cell": cmd_cell, "evolve": cmd_evolve,
            "corrector": cmd_corrector, "compare": cmd_compare}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


# ---------------------------------------------------------------------------
# driver


def run(cfg: RunConfig, out_dir: Path, workers: int = 1) -> dict[str, Path]:
    """Execute ``cfg`` and write its artifacts.  Returns the written paths by extension."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.command}_{cfg.digest}"
    t0 = time.time()
    H, model = cfg.build()
    result = HANDLERS[cfg.command](cfg, H, model, workers)
    lines, report, plot = result[:3]
    paths = {"csv": out_dir / f"{stem}.csv", "json": out_dir / f"{stem}.json",
             "gp": out_dir / f"{stem}.gp", "log": out_dir / f"{stem}.log"}
    paths["csv"].write_text("\n".join(lines) + "\n")
    doc = {"config": cfg.to_dict(), "seed": cfg.seed, "status": "ok", "result": _jsonable(report)}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths["gp"].write_text("set datafile separator ','\n" + plot.format(csv=paths["csv"].name))
    if len(result) > 3:
        paths.update(result[3](out_dir, stem))
    paths["log"].write_text(json.dumps({"started": t0, "elapsed_s": time.time() - t0,
                                        "workers": workers}) + "\n")
    return paths


def _error(out_dir: Path | None, command: str, code: int, exc: Exception, invariant: str) -> int:
    doc = {"status": "error", "command": command, "exit_code": code,
           "error": type(exc).__name__, "invariant": invariant, "message": str(exc)}
    text = json.dumps(doc, sort_keys=True)
    print(text)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"{command}_error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonconvex_hj", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="seed for random potentials")
        sp.add_argument("--workers", type=int, default=1, help="size of the worker pool")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text())
        if not isinstance(raw, dict):
            raise ConfigError("schema", "config must be a JSON object")
        cfg = RunConfig.from_dict(raw, args.command, args.seed)
        cfg.build()
    except (OSError, json.JSONDecodeError) as exc:
        return _error(args.out, args.command, 2, exc, "config_file")
    except (ConfigError, HamiltonianError, PotentialError, BranchRangeError, KeyError, TypeError) as exc:
        return _error(args.out, args.command, 2, exc, classify(exc))
    try:
        paths = run(cfg, args.out, max(1, int(args.workers)))
    except (HamiltonianError, PotentialError) as exc:
        return _error(args.out, args.command, 2, exc, classify(exc))
    except Exception as exc:  # solver failures are reported, not raised
        return _error(args.out, args.command, 3, exc, "solver")
    print(json.dumps({"status": "ok", "artifacts": {k: str(v) for k, v in paths.items()}}, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
