"""State, invariant and system abstractions shared by every integrator.

States are plain one-dimensional ``float64`` numpy arrays. Complex grid
fields are flattened column-major (first grid index fastest) and stored as
``[real parts; imaginary parts]`` so that all projection formulas act on a
real Euclidean space.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np


class IntegrationError(RuntimeError):
    """Base class for failures raised while advancing a trajectory."""


class NonFiniteError(IntegrationError):
    pass


class SingularDirectionError(IntegrationError):
    """The projection matrix is (numerically) rank deficient."""


class CollisionError(IntegrationError):
    """Two bodies, or a body and a field singularity, came too close."""


class ConvergenceError(IntegrationError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def as_state(y, d: Optional[int] = None) -> np.ndarray:
    """Return ``y`` as a finite float64 vector, checking its length."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"state must be one-dimensional, got shape {y.shape}")
    if d is not None and y.shape[0] != d:
        raise ValueError(f"state has dimension {y.shape[0]}, expected {d}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("state contains NaN or Inf")
    return y


@dataclass(frozen=True)
class Invariant:
    name: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class InvariantSet:
    """Scalar invariants ``I_i`` with reference values ``I_i(y0)``.

    The residual ``g_i(y) = I_i(y) - I_i(y0)`` vanishes on the invariant
    manifold. ``on_singular`` selects what the projection does when the
    gradients become linearly dependent: ``"raise"`` or ``"lstsq"``
    (minimum-norm solve).
    """

    invariants: tuple[Invariant, ...]
    reference_values: np.ndarray
    on_singular: str = "raise"

    def __post_init__(self):
        ref = np.asarray(self.reference_values, dtype=np.float64).reshape(-1)
        if ref.shape[0] != len(self.invariants):
            raise ValueError("one reference value per invariant required")
        if self.on_singular not in ("raise", "lstsq"):
            raise ValueError(f"unknown on_singular policy {self.on_singular!r}")
        object.__setattr__(self, "invariants", tuple(self.invariants))
        object.__setattr__(self, "reference_values", ref)

    @classmethod
    def at(cls, invariants: Sequence[Invariant], y0, **kwargs) -> "InvariantSet":
        """Build the set with references taken at ``y0``."""
        y0 = as_state(y0)
        ref = np.array([inv.value(y0) for inv in invariants], dtype=np.float64)
        return cls(tuple(invariants), ref, **kwargs)

    @property
    def l(self) -> int:
        return len(self.invariants)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(inv.name for inv in self.invariants)

    def values(self, y: np.ndarray) -> np.ndarray:
        out = np.empty(self.l)
        for i, inv in enumerate(self.invariants):
            v = inv.value(y)
            if not np.isfinite(v):
                raise NonFiniteError(f"invariant {inv.name!r} is not finite")
            out[i] = v
        return out

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        return self.values(y) - self.reference_values

    def gradients(self, y: np.ndarray) -> np.ndarray:
        G = np.empty((y.shape[0], self.l))
        for i, inv in enumerate(self.invariants):
            G[:, i] = inv.gradient(y)
        if not np.all(np.isfinite(G)):
            bad = [n for n, col in zip(self.names, G.T) if not np.all(np.isfinite(col))]
            raise NonFiniteError(f"gradient of invariant(s) {bad} is not finite")
        return G

    def subset(self, names: Sequence[str]) -> "InvariantSet":
        index = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise KeyError(f"unknown invariant(s) {missing}; available: {list(self.names)}")
        picked = [index[n] for n in names]
        return replace(
            self,
            invariants=tuple(self.invariants[i] for i in picked),
            reference_values=self.reference_values[picked],
        )


@dataclass(frozen=True)
class GridShape:
    extents: tuple[int, ...]
    complex: bool = False

    def __post_init__(self):
        extents = tuple(int(n) for n in self.extents)
        if not 1 <= len(extents) <= 3 or any(n <= 0 for n in extents):
            raise ValueError(f"invalid grid extents {self.extents}")
        object.__setattr__(self, "extents", extents)

    @property
    def rank(self) -> int:
        return len(self.extents)

    @property
    def size(self) -> int:
        return int(np.prod(self.extents)) * (2 if self.complex else 1)


def vectorize(grid, shape: Optional[GridShape] = None) -> np.ndarray:
    """Flatten a grid field column-major; complex fields become ``[re; im]``."""
    grid = np.asarray(grid)
    if shape is not None and tuple(grid.shape) != shape.extents:
        raise ValueError(f"grid shape {grid.shape} does not match {shape.extents}")
    if np.iscomplexobj(grid) or (shape is not None and shape.complex):
        flat = np.asarray(grid, dtype=np.complex128).ravel(order="F")
        return np.concatenate([flat.real, flat.imag])
    return np.asarray(grid, dtype=np.float64).ravel(order="F")


def devectorize(y: np.ndarray, shape: GridShape) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != shape.size:
        raise ValueError(f"vector of length {y.shape} does not fit grid {shape}")
    if shape.complex:
        n = y.shape[0] // 2
        flat = y[:n] + 1j * y[n:]
        return flat.reshape(shape.extents, order="F")
    return y.reshape(shape.extents, order="F")


@dataclass(frozen=True)
class SeparableSplit:
    """``H = T(p) + V(q)`` with the state laid out as ``[q; p]``."""

    n: int
    grad_kinetic: Callable[[np.ndarray], np.ndarray]
    grad_potential: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ConservativeSystem:
    name: str
    dimension: int
    rhs: Callable[[np.ndarray], np.ndarray]
    invariants: InvariantSet
    y0: np.ndarray
    exact: Optional[Callable[[float], np.ndarray]] = None
    separable: Optional[SeparableSplit] = None
    grid: Optional[GridShape] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "y0", as_state(self.y0, self.dimension))
        if self.grid is not None and self.grid.size != self.dimension:
            raise ValueError("grid size does not match system dimension")

    def with_invariants(self, names: Sequence[str]) -> "ConservativeSystem":
        return replace(self, invariants=self.invariants.subset(names))


def evaluate_invariants(inv: InvariantSet, y, d: Optional[int] = None) -> np.ndarray:
    """Residuals ``I_i(y) - I_i(y0)`` for every invariant in ``inv``."""
    return inv.evaluate(as_state(y, d))


def invariant_gradients(inv: InvariantSet, y, d: Optional[int] = None) -> np.ndarray:
    """``d x l`` matrix whose columns are the invariant gradients."""
    return inv.gradients(as_state(y, d))
