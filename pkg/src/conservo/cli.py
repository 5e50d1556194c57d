"""Command-line experiment runner.

Usage::

    conservo run kepler-table3.toml [--jobs N] [--out DIR] [--long]
    conservo list-systems
    conservo list-methods

A config file is TOML with an ``[experiment]`` table (``name``, ``study``,
optional ``tags``), a ``[system]`` table (``name`` plus constructor
parameters), a ``[study]`` table and one ``[[methods]]`` entry per method.
An optional ``[long]`` table overrides ``[study]`` keys under ``--long``.

Exit codes: 0 success, 2 invalid invocation or config (nothing written),
3 an integrator failure (the failing time is reported).
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import gpe
from .analysis import (
    METHOD_KINDS,
    ROUNDOFF_FLOOR,
    Method,
    atomic_write_text,
    convergence_study,
    halving_steps,
    invariant_order_study,
    lambda_error_study,
    order_rows,
    run_invariant_study,
    write_orders_csv,
    _render,
    fmt,
)
from .core import IntegrationError, devectorize
from .projection import NewtonPolicy, ProjectionDirection
from .rk import TABLEAU_NAMES
from .systems import (
    JULIAN_YEAR,
    charged_particle,
    harmonic_oscillator,
    load_solar_data,
    perturbed_kepler,
    solar_system,
)

EXIT_USAGE = 2
EXIT_RUNTIME = 3

STUDY_KINDS = ("convergence", "lambda", "invariant-order", "invariant-drift", "snapshot")
TIME_UNITS = {"1": 1.0, "s": 1.0, "yr": JULIAN_YEAR}
EXPERIMENTS_DIR = Path(__file__).resolve().parents[2] / "experiments"


class ConfigError(ValueError):
    pass


# -- systems ----------------------------------------------------------------

def _gpe_system(params):
    potentials = {
        "harmonic": gpe.harmonic_potential,
        "zero": lambda: gpe.zero_potential,
        "ring": gpe.ring_potential,
    }
    p = dict(params)
    pot_name = p.pop("potential", "harmonic")
    pot_args = p.pop("potential_params", {})
    initial = p.pop("initial", "vortex")
    which = p.pop("which", "both")
    amplitude = float(p.pop("amplitude", 1.0))
    kappa = tuple(p.pop("kappa", (1.0, 1.0)))
    if pot_name not in potentials:
        raise ConfigError(f"unknown potential {pot_name!r}; valid: {sorted(potentials)}")
    if "box" in p:
        p["box"] = tuple(float(v) for v in p["box"])
    try:
        cfg = gpe.GpeConfig(potential=potentials[pot_name](**pot_args), **p)
    except TypeError as exc:
        raise ConfigError(f"bad gpe parameters: {exc}") from None
    if initial == "vortex":
        return gpe.as_conservative_system(cfg, which, gpe.vortex_initial(cfg))
    if initial == "plane-wave":
        exact = None
        if pot_name == "zero" and cfg.omega == 0.0:
            exact = lambda t: gpe.plane_wave(cfg, amplitude, kappa, t)
        return gpe.as_conservative_system(
            cfg, which, gpe.plane_wave(cfg, amplitude, kappa), exact)
    raise ConfigError(f"unknown initial datum {initial!r}; valid: ['vortex', 'plane-wave']")


def _solar(params):
    data = load_solar_data(params["data"]) if "data" in params else None
    return solar_system(data)


SYSTEMS = {
    "harmonic": (lambda p: harmonic_oscillator(**p), "H"),
    "kepler": (lambda p: perturbed_kepler(**p), "H, L"),
    "solar": (_solar, "H, Lx, Ly, Lz"),
    "particle": (lambda p: charged_particle(**p), "H, L"),
    "gpe": (_gpe_system, "M, E (select with which = mass|energy|both)"),
}


def build_system(spec: dict):
    params = dict(spec)
    name = params.pop("name", None)
    if name not in SYSTEMS:
        raise ConfigError(f"unknown system {name!r}; valid: {sorted(SYSTEMS)}")
    try:
        return SYSTEMS[name][0](params)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"cannot build system {name!r}: {exc}") from None


#: ``[[methods]]`` keys that override the ``[study]`` step sequence for that method.
STEP_OVERRIDES = ("steps", "h0", "levels")


def _study_for(study: dict, method_spec: dict) -> dict:
    out = dict(study)
    over = {k: method_spec[k] for k in STEP_OVERRIDES if k in method_spec}
    if over:
        for k in STEP_OVERRIDES:
            out.pop(k, None)
        out.update(over)
    return out


def build_method(spec: dict) -> Method:
    spec = {k: v for k, v in spec.items() if k not in STEP_OVERRIDES}
    kind = spec.pop("kind", "eip")
    if kind not in METHOD_KINDS:
        raise ConfigError(f"unknown method {kind!r}; valid: {list(METHOD_KINDS)}")
    tab = spec.pop("tableau", "RK4")
    if str(tab).upper() not in TABLEAU_NAMES:
        raise ConfigError(f"unknown tableau {tab!r}; valid: {list(TABLEAU_NAMES)}")
    invariants = spec.pop("invariants", None)
    try:
        direction = ProjectionDirection.parse(spec.pop("direction", "predicted"))
        newton = NewtonPolicy(int(spec.pop("newton_iters", 1)), float(spec.pop("newton_tol", 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if spec:
        raise ConfigError(f"unknown method keys {sorted(spec)}")
    return Method(kind, str(tab).upper(), None if invariants is None else tuple(invariants),
                  direction, newton)


# -- config -----------------------------------------------------------------

def resolve_config_path(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for cand in (EXPERIMENTS_DIR / path, EXPERIMENTS_DIR / f"{path}.toml"):
        if cand.exists():
            return cand
    raise ConfigError(f"config {path!r} not found (also looked in {EXPERIMENTS_DIR})")


def _positive(study, key):
    try:
        v = float(study[key])
    except KeyError:
        raise ConfigError(f"[study] is missing {key!r}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"[study] {key} must be a number") from None
    if not v > 0:
        raise ConfigError(f"[study] {key} must be positive, got {v}")
    return v


def _steps(study):
    if "steps" in study:
        steps = [float(h) for h in study["steps"]]
    elif "h0" in study:
        steps = halving_steps(_positive(study, "h0"), int(study.get("levels", 4)))
    else:
        raise ConfigError("[study] needs 'steps' or 'h0'")
    if any(not h > 0 for h in steps):
        raise ConfigError(f"step sizes must be positive, got {steps}")
    if len(steps) < 2 or any(b >= a for a, b in zip(steps, steps[1:])):
        raise ConfigError("a step sequence needs >= 2 strictly decreasing entries")
    return steps


def load_config(path, long: bool = False) -> dict:
    """Parse and fully validate a config; raises :class:`ConfigError`."""
    path = resolve_config_path(str(path))
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    exp = raw.get("experiment", {})
    study = dict(raw.get("study", {}))
    if long:
        study.update(raw.get("long", {}))
    elif "long" in exp.get("tags", []):
        raise ConfigError(f"{path.name} is tagged long; pass --long to run it")
    kind = exp.get("study")
    if kind not in STUDY_KINDS:
        raise ConfigError(f"unknown study kind {kind!r}; valid: {list(STUDY_KINDS)}")
    unit = str(study.get("time_unit", "1"))
    if unit not in TIME_UNITS:
        raise ConfigError(f"unknown time unit {unit!r}; valid: {list(TIME_UNITS)}")
    if "system" not in raw:
        raise ConfigError("missing [system] table")
    system = build_system(raw["system"])
    methods = [build_method(m) for m in raw.get("methods", [])]
    if not methods:
        raise ConfigError("no [[methods]] given")
    for m in methods:
        if m.kind == "stormer-verlet" and system.separable is None:
            raise ConfigError(f"stormer-verlet needs a separable system, not {system.name!r}")
        if m.invariants is not None:
            missing = set(m.invariants) - set(system.invariants.names)
            if missing:
                raise ConfigError(
                    f"{system.name} has no invariant(s) {sorted(missing)}; "
                    f"valid: {list(system.invariants.names)}")

    cfg = {
        "path": str(path),
        "name": exp.get("name", path.stem),
        "study": kind,
        "system": raw["system"],
        "methods": raw.get("methods", []),
        "unit": unit,
        "params": study,
    }
    if kind == "invariant-drift" and "hs" in study:
        if not study["hs"] or any(not float(h) > 0 for h in study["hs"]):
            raise ConfigError(f"[study] hs must be positive step sizes, got {study['hs']}")
        _positive(study, "horizon")
    elif kind in ("invariant-drift", "snapshot"):
        _positive(study, "h")
        _positive(study, "horizon")
        if int(study.get("stride", 1)) < 1:
            raise ConfigError("[study] stride must be >= 1")
    else:
        for m in cfg["methods"]:
            _steps(_study_for(study, m))
        _positive(study, "horizon")
    if kind == "lambda" and raw["system"].get("name") != "harmonic":
        raise ConfigError("the lambda study needs the harmonic system")
    if kind == "convergence" and study.get("mode", "self") not in ("self", "exact"):
        raise ConfigError("[study] mode must be 'self' or 'exact'")
    if kind == "convergence" and study.get("mode") == "exact" and system.exact is None:
        raise ConfigError(f"{system.name} has no exact solution for mode = 'exact'")
    if kind == "snapshot" and system.grid is None:
        raise ConfigError("snapshot studies need a grid (gpe) system")
    files = [c["file"] for c in _cells(cfg)]
    dupes = sorted({f for f in files if files.count(f) > 1})
    if dupes:
        raise ConfigError(f"methods listed more than once: {dupes}")
    return cfg


# -- cells ------------------------------------------------------------------

def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def _cell_name(method: Method) -> str:
    if method.kind in ("bare-rk", "stormer-verlet"):
        return method.label
    return f"{method.label}-{method.tableau}"


def _cells(cfg):
    """One cell per (method) for order studies, per (method, h) otherwise."""
    out = []
    for i, m in enumerate(cfg["methods"]):
        label = _cell_name(build_method(m))
        if cfg["study"] == "invariant-drift" and "hs" in cfg["params"]:
            for h in cfg["params"]["hs"]:
                out.append({"index": i, "method": m, "h": float(h),
                            "file": f"{_slug(label)}-h{fmt(h)}"})
        else:
            out.append({"index": i, "method": m, "h": None, "file": _slug(label)})
    return out


class CellFailure(Exception):
    def __init__(self, label, message, time):
        super().__init__(message)
        self.label = label
        self.time = time


def run_cell(cfg: dict, cell: dict, out_dir: str) -> dict:
    """Run one cell, write its CSV atomically and return a summary row.

    Systems are rebuilt here so the function can run in a worker process.
    """
    system = build_system(cfg["system"])
    method = build_method(cell["method"])
    study = _study_for(cfg["params"], cell["method"])
    unit = TIME_UNITS[cfg["unit"]]
    kind = cfg["study"]
    target = Path(out_dir) / f"{cell['file']}.csv"

    if kind in ("convergence", "invariant-order", "lambda"):
        steps = _steps(study)
        horizon = float(study["horizon"])
        try:
            if kind == "convergence":
                series = convergence_study(system, method, [h * unit for h in steps],
                                           horizon * unit, study.get("mode", "self"),
                                           study.get("norm", "inf"))
            elif kind == "invariant-order":
                series = invariant_order_study(system, method, [h * unit for h in steps],
                                               horizon * unit, study.get("names"),
                                               study.get("statistic", "max"))
            else:
                series = lambda_error_study(system.params["omega"], system.y0,
                                            method.tableau, steps, horizon)
        except IntegrationError as exc:
            raise CellFailure(method.label, str(exc), getattr(exc, "time", None)) from None
        series = type(series)(tuple(h / unit for h in series.steps), series.errors,
                              series.label)
        floor = float(study.get("floor", 0.0 if kind == "lambda" else ROUNDOFF_FLOOR))
        rows = order_rows(kind, system.name, method, series, floor)
        write_orders_csv(target, rows)
        return {"kind": "orders", "rows": rows}

    h = float(cell["h"] if cell["h"] is not None else study["h"])
    horizon = float(study["horizon"])
    snaps = [float(t) * unit for t in study.get("snapshot_times", [])] if kind == "snapshot" else ()
    res = run_invariant_study(system, method, h * unit, horizon * unit,
                              int(study.get("stride", 1)), snaps,
                              bool(study.get("relative", False)))
    rows = ((t / unit, name, res.residuals[name][k])
            for k, t in enumerate(res.times) for name in res.residuals)
    atomic_write_text(target, _render("residuals", ("t", "invariant_name", "residual"), rows))
    if kind == "snapshot":
        for t_snap, y in sorted(res.snapshots.items()):
            name = Path(out_dir) / f"{cell['file']}-t{t_snap / unit:g}.snap"
            tmp = name.with_suffix(".snap.tmp")
            gpe.write_snapshot(tmp, devectorize(y, system.grid), t_snap / unit)
            os.replace(tmp, name)
    if not res.ok:
        t_fail = res.failed_time / unit
        raise CellFailure(method.label, res.error, t_fail)
    return {"kind": "residuals", "rows": [
        {"method": method.label, "h": h, "invariant": name,
         "max_abs": float(np.max(np.abs(series))), "final": float(series[-1])}
        for name, series in res.residuals.items()
    ]}


def _cell_entry(args):
    cfg, cell, out_dir = args
    try:
        return run_cell(cfg, cell, out_dir), None
    except CellFailure as exc:
        return None, (exc.label, str(exc), exc.time)


def run(cfg: dict, out_root, jobs: int = 1) -> int:
    out_dir = Path(out_root) / _slug(cfg["name"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = _cells(cfg)
    work = [(cfg, c, str(out_dir)) for c in cells]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell_entry, work))
    else:
        outcomes = [_cell_entry(w) for w in work]

    failures = [f for _, f in outcomes if f is not None]
    results = [r for r, _ in outcomes if r is not None]
    if results and results[0]["kind"] == "orders":
        write_orders_csv(out_dir / "orders.csv", [row for r in results for row in r["rows"]])
    elif results:
        cols = ("method", "h", "invariant", "max_abs", "final")
        atomic_write_text(out_dir / "summary.csv", _render(
            "drift-summary", cols, ([row[c] for c in cols] for r in results for row in r["rows"])))
    for label, message, t in failures:
        when = "unknown time" if t is None else f"t = {t:.17g}"
        print(f"error: {cfg['name']} / {label}: {message} (at {when})", file=sys.stderr)
    return EXIT_RUNTIME if failures else 0


# -- entry point ------------------------------------------------------------

def _list_systems():
    for name, (_, invariants) in SYSTEMS.items():
        print(f"{name:10s} invariants: {invariants}")


def _list_methods():
    for kind in METHOD_KINDS:
        print(kind)
    print("tableaux:   " + ", ".join(TABLEAU_NAMES))
    print("directions: " + ", ".join(d.value for d in ProjectionDirection))
    print("studies:    " + ", ".join(STUDY_KINDS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conservo",
        description="Run invariant-preserving integration experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="TOML config (path, or name under experiments/)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel cells (default 1)")
    p_run.add_argument("--out", default=None,
                       help="output directory (default $CONSERVO_OUT or ./conservo-out)")
    p_run.add_argument("--long", action="store_true", help="use paper-scale horizons")
    sub.add_parser("list-systems", help="list available systems")
    sub.add_parser("list-methods", help="list methods, tableaux and study kinds")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list-systems":
        _list_systems()
        return 0
    if args.command == "list-methods":
        _list_methods()
        return 0
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config, long=args.long)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or os.environ.get("CONSERVO_OUT") or "conservo-out"
    return run(cfg, out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
