"""Explicit invariants-preserving (EIP) correction and its Newton comparator.

After an explicit RK predictor ``y_hat`` the EIP step moves along the
projection direction ``D`` (``d x l``) by a multiplier obtained from one
Newton iteration on ``g(y_hat + D lam) = 0`` started at ``lam = 0``::

    lam = -(grad g(y_hat)^T D)^{-1} g(y_hat),     y_next = y_hat + D lam

With the default direction ``D = grad g(y_hat)`` this is the normal-equation
form ``-(G^T G)^{-1} g``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ConservativeSystem,
    ConvergenceError,
    SingularDirectionError,
)
from .rk import ButcherTableau, rk_step

#: Condition-number limit of the (column-scaled) ``l x l`` projection matrix.
CONDITION_LIMIT = 1e12
#: Relative residual above which a step entry is flagged as off-manifold.
MANIFOLD_WARN_TOL = 1e-10


class ManifoldDriftWarning(UserWarning):
    pass


class ProjectionDirection(enum.Enum):
    PREDICTED = "predicted"
    PREVIOUS = "previous"
    MIDPOINT = "midpoint"

    @classmethod
    def parse(cls, value) -> "ProjectionDirection":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown projection direction {value!r}; "
                f"valid: {[d.value for d in cls]}"
            ) from None


@dataclass(frozen=True)
class NewtonPolicy:
    """``max_iters`` Newton updates; ``tol = 0`` means run all of them."""

    max_iters: int = 1
    tol: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("Newton policy needs at least one iteration")
        if self.tol < 0:
            raise ValueError("Newton tolerance must be non-negative")


def _solve_small(M: np.ndarray, rhs: np.ndarray, on_singular: str = "raise") -> np.ndarray:
    """Solve the ``l x l`` system ``M x = rhs`` with symmetric diagonal scaling.

    The scaling makes the rank test independent of the units of the
    individual invariants (the solar-system gradients differ by ~10 orders
    of magnitude between energy and angular momentum).
    """
    l = M.shape[0]
    if l == 1:
        m = M[0, 0]
        if m == 0.0 or not np.isfinite(m):
            if on_singular == "lstsq":
                return np.zeros(1)
            raise SingularDirectionError(
                "projection direction is orthogonal to the invariant gradient"
            )
        return rhs / m
    scale = np.sqrt(np.abs(np.diag(M)))
    if np.any(scale == 0.0):
        cond = np.inf
    else:
        S = M / np.outer(scale, scale)
        cond = np.linalg.cond(S)
    if not cond <= CONDITION_LIMIT:
        if on_singular == "lstsq":
            safe = np.where(scale == 0.0, 1.0, scale)
            S = M / np.outer(safe, safe)
            z = np.linalg.lstsq(S, rhs / safe, rcond=1.0 / CONDITION_LIMIT)[0]
            return z / safe
        raise SingularDirectionError(
            f"invariant gradients are not of full column rank "
            f"(scaled condition estimate {cond:.3e} > {CONDITION_LIMIT:.0e})"
        )
    return np.linalg.solve(S, rhs / scale) / scale


def eip_lambda(residual, G: np.ndarray, direction: Optional[np.ndarray] = None,
               on_singular: str = "raise") -> np.ndarray:
    """Explicit multiplier ``-(G^T D)^{-1} residual`` (``D`` defaults to ``G``).

    Raises :class:`SingularDirectionError` when the scaled ``l x l`` matrix
    has condition number above ``CONDITION_LIMIT``.
    """
    residual = np.atleast_1d(np.asarray(residual, dtype=np.float64))
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    D = G if direction is None else np.asarray(direction, dtype=np.float64).reshape(G.shape)
    if residual.shape[0] != G.shape[1]:
        raise ValueError("residual length does not match number of gradient columns")
    return -_solve_small(G.T @ D, residual, on_singular)


def _direction_matrix(system, direction, y_n, y_hat, G_hat):
    inv = system.invariants
    if direction is ProjectionDirection.PREDICTED:
        return G_hat
    if direction is ProjectionDirection.PREVIOUS:
        return inv.gradients(y_n)
    return inv.gradients(0.5 * (y_n + y_hat))


def _check_entry(system, y_n):
    res = system.invariants.evaluate(y_n)
    scale = np.maximum(1.0, np.abs(system.invariants.reference_values))
    if np.any(np.abs(res) > MANIFOLD_WARN_TOL * scale):
        warnings.warn(
            f"{system.name}: step entry is off the invariant manifold "
            f"(residuals {res})",
            ManifoldDriftWarning,
            stacklevel=3,
        )


def eip_step(system: ConservativeSystem, y_n: np.ndarray, h: float, tab: ButcherTableau,
             direction=ProjectionDirection.PREDICTED, *, check_entry: bool = True,
             return_lambda: bool = False):
    """One EIP step: RK predictor followed by a single explicit correction."""
    direction = ProjectionDirection.parse(direction)
    if check_entry:
        _check_entry(system, y_n)
    inv = system.invariants
    y_hat = rk_step(system.rhs, y_n, h, tab)
    res = inv.evaluate(y_hat)
    G = inv.gradients(y_hat)
    D = _direction_matrix(system, direction, y_n, y_hat, G)
    lam = -_solve_small(G.T @ D, res, inv.on_singular)
    y_next = y_hat + D @ lam
    if return_lambda:
        return y_next, lam
    return y_next


def newton_projection_step(system: ConservativeSystem, y_n: np.ndarray, h: float,
                           tab: ButcherTableau, policy: NewtonPolicy = NewtonPolicy(),
                           direction=ProjectionDirection.PREDICTED, *,
                           check_entry: bool = True, return_lambda: bool = False):
    """Projection onto ``g = 0`` along ``D`` solved by Newton from ``lam = 0``.

    Returns ``(y_next, iterations_used, final_residual_norm)`` (plus the
    multiplier when ``return_lambda``). The Jacobian
    ``grad g(y_hat + D lam)^T D`` is rebuilt every iteration.
    """
    direction = ProjectionDirection.parse(direction)
    if check_entry:
        _check_entry(system, y_n)
    inv = system.invariants
    y_hat = rk_step(system.rhs, y_n, h, tab)
    G_hat = inv.gradients(y_hat)
    D = _direction_matrix(system, direction, y_n, y_hat, G_hat)

    lam = np.zeros(inv.l)
    iters = 0
    G_k = G_hat
    for k in range(policy.max_iters):
        y_k = y_hat + D @ lam
        F = inv.evaluate(y_k)
        if policy.tol > 0 and np.linalg.norm(F) <= policy.tol:
            break
        if k > 0:
            G_k = inv.gradients(y_k)
        lam = lam - _solve_small(G_k.T @ D, F, inv.on_singular)
        iters += 1
    y_next = y_hat + D @ lam
    final = float(np.linalg.norm(inv.evaluate(y_next)))
    if policy.tol > 0 and final > policy.tol:
        raise ConvergenceError(
            f"Newton projection did not reach {policy.tol:.1e} in "
            f"{policy.max_iters} iterations (residual {final:.3e})",
            final,
        )
    if return_lambda:
        return y_next, iters, final, lam
    return y_next, iters, final


def lambda_star_harmonic(omega: float, y0, y_hat) -> float:
    """Exact projection multiplier for ``H = omega/2 |y|^2``.

    Evaluates ``-(1/omega)(1 - |y0|/|y_hat|)`` in the cancellation-free form
    ``-(|y_hat|^2 - |y0|^2) / (omega |y_hat| (|y_hat| + |y0|))``.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    y0 = np.asarray(y0, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    s_hat = float(y_hat @ y_hat)
    s0 = float(y0 @ y0)
    if s_hat == 0.0:
        raise ValueError("predicted state has zero norm")
    n_hat = np.sqrt(s_hat)
    return -(s_hat - s0) / (omega * n_hat * (n_hat + np.sqrt(s0)))
