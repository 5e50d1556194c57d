"""Run drivers, convergence-order estimation and CSV output."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import ConservativeSystem, IntegrationError
from .projection import (
    NewtonPolicy,
    ProjectionDirection,
    eip_step,
    lambda_star_harmonic,
    newton_projection_step,
)
from .rk import rk_step, tableau
from .systems import harmonic_oscillator, stormer_verlet_step

#: Errors below this are treated as round-off; their order pair is skipped.
ROUNDOFF_FLOOR = 1e-14
CSV_SCHEMA = "conservo-csv/1"

METHOD_KINDS = ("bare-rk", "eip", "newton-projection", "stormer-verlet")


class OrderEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class Method:
    """How to advance one step: ``kind`` is one of :data:`METHOD_KINDS`.

    ``invariants`` names the preserved subset (``None`` keeps all of the
    system's invariants); it is ignored by ``bare-rk`` and
    ``stormer-verlet``.
    """

    kind: str = "eip"
    tableau: str = "RK4"
    invariants: Optional[tuple[str, ...]] = None
    direction: ProjectionDirection = ProjectionDirection.PREDICTED
    newton: NewtonPolicy = NewtonPolicy()

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}; valid: {list(METHOD_KINDS)}")
        tableau(self.tableau)  # validates the name
        object.__setattr__(self, "direction", ProjectionDirection.parse(self.direction))
        if self.invariants is not None:
            object.__setattr__(self, "invariants", tuple(self.invariants))

    @property
    def label(self) -> str:
        if self.kind == "bare-rk":
            return self.tableau
        if self.kind == "stormer-verlet":
            return "SV"
        inv = "".join(self.invariants) if self.invariants else "all"
        if self.kind == "newton-projection":
            return f"NP{self.newton.max_iters}-{inv}"
        return f"EIP-{inv}"

    def stepper(self, system: ConservativeSystem) -> Callable[[np.ndarray, float], np.ndarray]:
        tab = tableau(self.tableau)
        if self.kind == "bare-rk":
            return lambda y, h: rk_step(system.rhs, y, h, tab)
        if self.kind == "stormer-verlet":
            if system.separable is None:
                raise TypeError(f"Stormer-Verlet needs a separable system, got {system.name!r}")
            return lambda y, h: stormer_verlet_step(system, y, h)
        target = system if self.invariants is None else system.with_invariants(self.invariants)
        if self.kind == "eip":
            return lambda y, h: eip_step(target, y, h, tab, self.direction, check_entry=False)
        return lambda y, h: newton_projection_step(
            target, y, h, tab, self.newton, self.direction, check_entry=False)[0]


@dataclass
class RunResult:
    system: str
    method: str
    h: float
    times: np.ndarray
    residuals: dict[str, np.ndarray]
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)
    final_state: Optional[np.ndarray] = None
    duration: float = 0.0
    error: Optional[str] = None
    failed_time: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def max_residual(self, names: Optional[Iterable[str]] = None) -> float:
        names = list(self.residuals) if names is None else list(names)
        return max(float(np.max(np.abs(self.residuals[n]))) for n in names)


def _n_steps(h: float, horizon: float, exact: bool = True) -> int:
    if not h > 0 or not horizon > 0:
        raise ValueError("step size and horizon must be positive")
    if not exact:
        return max(1, int(round(horizon / h)))
    n = int(round(horizon / h))
    if n < 1 or abs(n * h - horizon) > 1e-9 * horizon:
        raise ValueError(f"horizon {horizon} is not a multiple of the step {h}")
    return n


def run_invariant_study(system: ConservativeSystem, method: Method, h: float, horizon: float,
                        stride: int = 1, snapshot_times: Sequence[float] = (),
                        relative: bool = False,
                        on_sample: Optional[Callable[[float, np.ndarray], None]] = None,
                        ) -> RunResult:
    """Integrate and record every invariant residual every ``stride`` steps.

    Residuals are always reported for the system's full invariant set,
    whichever subset the method preserves. ``relative`` divides each by
    ``|I(y0)|``. When ``horizon`` is not a multiple of ``h`` the step
    count is rounded to the nearest integer. An :class:`IntegrationError` ends the run
    early and is recorded on the result instead of propagating.
    """
    n = _n_steps(h, horizon, exact=False)
    stride = max(1, int(stride))
    inv = system.invariants
    scale = np.abs(inv.reference_values) if relative else np.ones(inv.l)
    scale = np.where(scale == 0.0, 1.0, scale)
    step = method.stepper(system)
    snap_steps = {int(round(t / h)): t for t in snapshot_times}

    times, rows = [0.0], [inv.evaluate(system.y0) / scale]
    snapshots = {}
    y = system.y0.copy()
    if 0 in snap_steps:
        snapshots[snap_steps[0]] = y.copy()
    if on_sample is not None:
        on_sample(0.0, y)
    error = failed = None
    t0 = time.perf_counter()
    # non-finite states are detected explicitly below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n + 1):
            try:
                y = step(y, h)
                if not np.all(np.isfinite(y)):
                    raise IntegrationError("state became non-finite")
                if k % stride == 0 or k == n:
                    t = k * h
                    row = inv.evaluate(y) / scale
                    times.append(t)
                    rows.append(row)
                    if on_sample is not None:
                        on_sample(t, y)
            except IntegrationError as exc:
                error, failed = str(exc), k * h
                break
            if k in snap_steps:
                snapshots[snap_steps[k]] = y.copy()
    duration = time.perf_counter() - t0
    res = np.array(rows)
    return RunResult(
        system.name, method.label, h, np.array(times),
        {name: res[:, i] for i, name in enumerate(inv.names)},
        snapshots, y, duration, error, failed,
    )


def integrate(system: ConservativeSystem, method: Method, h: float, horizon: float) -> np.ndarray:
    """Final state after ``horizon / h`` steps.

    Integrator errors propagate with the failing time attached as ``exc.time``.
    """
    n = _n_steps(h, horizon)
    step = method.stepper(system)
    y = system.y0.copy()
    for k in range(1, n + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                y = step(y, h)
        except IntegrationError as exc:
            exc.time = k * h
            raise
    return y


# -- order estimation -------------------------------------------------------

@dataclass(frozen=True)
class ErrorSeries:
    steps: tuple[float, ...]
    errors: tuple[float, ...]
    label: str = ""

    def __post_init__(self):
        steps = tuple(float(h) for h in self.steps)
        errors = tuple(float(e) for e in self.errors)
        if len(steps) != len(errors) or len(steps) < 2:
            raise ValueError("an error series needs at least two (h, error) pairs")
        if any(b >= a for a, b in zip(steps, steps[1:])):
            raise ValueError("step sizes must be strictly decreasing")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "errors", errors)


def estimate_order(series: ErrorSeries, floor: float = ROUNDOFF_FLOOR) -> list[float]:
    """Observed order between adjacent levels, ``log(e_i/e_{i+1}) / log(h_i/h_{i+1})``.

    For halving steps this is ``log2`` of the error ratio; fed with adjacent
    solution differences it is the self-convergence estimate. Pairs with an
    error below ``floor`` come back as ``nan``.
    """
    out = []
    for (h0, e0), (h1, e1) in zip(zip(series.steps, series.errors),
                                  zip(series.steps[1:], series.errors[1:])):
        if e0 <= 0 or e1 <= 0 or not (math.isfinite(e0) and math.isfinite(e1)):
            raise OrderEstimationError(
                f"non-positive error at h={h0:g}/{h1:g}; error floor reached"
            )
        if e0 < floor or e1 < floor:
            out.append(float("nan"))
            continue
        out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


def vector_norm(v: np.ndarray, norm: str = "inf", weight: float = 1.0) -> float:
    if norm == "inf":
        return float(np.max(np.abs(v)))
    if norm == "l2":
        return float(np.sqrt(weight * np.sum(v * v)))
    raise ValueError(f"unknown norm {norm!r}")


def _state_norm(system, v, norm):
    if norm == "l2" and system.grid is not None:
        cfg = system.params.get("config")
        weight = cfg.hx * cfg.hy if cfg is not None else 1.0
        return vector_norm(v, "l2", weight)
    if norm == "inf" and system.grid is not None and system.grid.complex:
        n = v.shape[0] // 2
        return float(np.max(np.hypot(v[:n], v[n:])))
    return vector_norm(v, norm)


def halving_steps(h0: float, levels: int) -> list[float]:
    return [h0 / 2**k for k in range(levels)]


def convergence_study(system: ConservativeSystem, method: Method, steps: Sequence[float],
                      horizon: float, mode: str = "self", norm: str = "inf") -> ErrorSeries:
    """Solution errors at ``horizon`` over a sequence of step sizes.

    ``mode="exact"`` compares against ``system.exact``; ``mode="self"``
    returns the differences between adjacent levels, labelled with the finer
    step of each pair.
    """
    finals = [integrate(system, method, h, horizon) for h in steps]
    if mode == "exact":
        if system.exact is None:
            raise ValueError(f"system {system.name!r} has no exact solution")
        ref = system.exact(horizon)
        errs = [_state_norm(system, y - ref, norm) for y in finals]
        return ErrorSeries(tuple(steps), tuple(errs), method.label)
    if mode != "self":
        raise ValueError(f"unknown convergence mode {mode!r}")
    diffs = [_state_norm(system, a - b, norm) for a, b in zip(finals, finals[1:])]
    return ErrorSeries(tuple(steps[1:]), tuple(diffs), method.label)


def invariant_order_study(system: ConservativeSystem, method: Method, steps: Sequence[float],
                          horizon: float, names: Optional[Sequence[str]] = None,
                          statistic: str = "max") -> ErrorSeries:
    """Invariant residual at each step size: the max of ``|g|`` over
    ``[0, horizon]`` (``statistic="max"``) or ``|g|`` at the last step
    (``"final"``), maximised over ``names``.

    ``names`` defaults to the invariants the method preserves.
    """
    if statistic not in ("max", "final"):
        raise ValueError(f"unknown statistic {statistic!r}")
    names = names or method.invariants or system.invariants.names
    errs = []
    for h in steps:
        res = run_invariant_study(system, method, h, horizon)
        if not res.ok:
            raise IntegrationError(res.error)
        if statistic == "max":
            errs.append(res.max_residual(names))
        else:
            errs.append(max(abs(float(res.residuals[n][-1])) for n in names))
    return ErrorSeries(tuple(steps), tuple(errs), method.label)


def lambda_error_study(omega: float = 10.0, y0=(1.0, 0.0), tab: str = "RK4",
                       steps: Sequence[float] = (0.1, 0.05, 0.025, 0.0125),
                       horizon: float = 1.0) -> ErrorSeries:
    """``|lam_hat - lam_star|`` at the last EIP step of a run to ``horizon``
    on the harmonic oscillator, one entry per step size."""
    system = harmonic_oscillator(omega, y0)
    t = tableau(tab)
    errs = []
    for h in steps:
        y = system.y0.copy()
        for _ in range(_n_steps(h, horizon)):
            y_hat = rk_step(system.rhs, y, h, t)
            lam_star = lambda_star_harmonic(omega, system.y0, y_hat)
            y, lam = eip_step(system, y, h, t, check_entry=False, return_lambda=True)
        errs.append(abs(float(lam[0]) - lam_star))
    return ErrorSeries(tuple(steps), tuple(errs), f"lambda-{tab}")


# -- CSV output -------------------------------------------------------------

ORDER_COLUMNS = ("study", "system", "method", "tableau", "h", "error", "fitted_order")
RESIDUAL_COLUMNS = ("t", "invariant_name", "residual")


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else format(x, ".17g")


def order_rows(study: str, system: str, method: Method, series: ErrorSeries,
               floor: float = ROUNDOFF_FLOOR) -> list[dict]:
    orders = [None] + estimate_order(series, floor)
    return [
        {"study": study, "system": system, "method": method.label,
         "tableau": method.tableau if method.kind != "stormer-verlet" else "",
         "h": h, "error": e, "fitted_order": o}
        for h, e, o in zip(series.steps, series.errors, orders)
    ]


def _render(kind: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_SCHEMA} {kind}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_orders_csv(path, rows: Iterable[dict]) -> None:
    atomic_write_text(path, _render(
        "orders", ORDER_COLUMNS, ([r[c] for c in ORDER_COLUMNS] for r in rows)))


def residual_rows(result: RunResult):
    for k, t in enumerate(result.times):
        for name, series in result.residuals.items():
            yield t, name, series[k]


def write_residuals_csv(path, result: RunResult) -> None:
    atomic_write_text(path, _render("residuals", RESIDUAL_COLUMNS, residual_rows(result)))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
