"""Explicit Runge-Kutta tableaux and the one-step map."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from .core import NonFiniteError


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        c = np.array(self.c, dtype=np.float64)
        s = b.shape[0]
        if A.shape != (s, s) or c.shape != (s,):
            raise ValueError(f"inconsistent tableau shapes A{A.shape} b{b.shape} c{c.shape}")
        if np.any(np.triu(A) != 0.0):
            raise ValueError(f"{self.name}: A must be strictly lower triangular")
        if abs(b.sum() - 1.0) > 1e-15:
            raise ValueError(f"{self.name}: weights do not sum to one")
        if np.max(np.abs(A.sum(axis=1) - c)) > 1e-15:
            raise ValueError(f"{self.name}: row-sum condition violated")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def stages(self) -> int:
        return self.b.shape[0]


def _frac_tableau(name, A, b, c, order):
    f = lambda v: float(Fraction(v))
    return ButcherTableau(
        name,
        [[f(v) for v in row] for row in A],
        [f(v) for v in b],
        [f(v) for v in c],
        order,
    )


_TABLEAUX = {
    "RK1": lambda: _frac_tableau("RK1", [["0"]], ["1"], ["0"], 1),
    "RK2": lambda: _frac_tableau(
        "RK2", [["0", "0"], ["1/2", "0"]], ["0", "1"], ["0", "1/2"], 2
    ),
    "RK3": lambda: _frac_tableau(
        "RK3",
        [["0", "0", "0"], ["1/3", "0", "0"], ["0", "2/3", "0"]],
        ["1/4", "0", "3/4"],
        ["0", "1/3", "2/3"],
        3,
    ),
    "RK4": lambda: _frac_tableau(
        "RK4",
        [["0"] * 4, ["1/2", "0", "0", "0"], ["0", "1/2", "0", "0"], ["0", "0", "1", "0"]],
        ["1/6", "2/6", "2/6", "1/6"],
        ["0", "1/2", "1/2", "1"],
        4,
    ),
    # Fehlberg's six-stage pair, fifth-order weights.
    "RK5": lambda: _frac_tableau(
        "RK5",
        [
            ["0"] * 6,
            ["1/4", "0", "0", "0", "0", "0"],
            ["3/32", "9/32", "0", "0", "0", "0"],
            ["1932/2197", "-7200/2197", "7296/2197", "0", "0", "0"],
            ["439/216", "-8", "3680/513", "-845/4104", "0", "0"],
            ["-8/27", "2", "-3544/2565", "1859/4104", "-11/40", "0"],
        ],
        ["16/135", "0", "6656/12825", "28561/56430", "-9/50", "2/55"],
        ["0", "1/4", "3/8", "12/13", "1", "1/2"],
        5,
    ),
}

TABLEAU_NAMES = tuple(_TABLEAUX)


@lru_cache(maxsize=None)
def _build(name: str) -> ButcherTableau:
    return _TABLEAUX[name]()


def tableau(name: str) -> ButcherTableau:
    """Return one of the built-in tableaux ``RK1`` ... ``RK5``."""
    key = str(name).upper()
    if key not in _TABLEAUX:
        raise ValueError(f"unknown tableau {name!r}; valid names: {', '.join(TABLEAU_NAMES)}")
    return _build(key)


def rk_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float,
            tab: ButcherTableau) -> np.ndarray:
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    s = tab.stages
    K = np.empty((s,) + y.shape)
    for i in range(s):
        yi = y.copy()
        for j in range(i):
            if tab.A[i, j] != 0.0:
                yi += (h * tab.A[i, j]) * K[j]
        K[i] = f(yi)
        if not np.all(np.isfinite(K[i])):
            raise NonFiniteError(f"stage {i + 1} of {tab.name} produced a non-finite value")
    out = y.copy()
    for i in range(s):
        if tab.b[i] != 0.0:
            out += (h * tab.b[i]) * K[i]
    return out


# -- order conditions -------------------------------------------------------
# A rooted tree is the sorted tuple of its child subtrees; () is a single node.

def _attach_leaf(tree):
    yield tuple(sorted(tree + ((),)))
    for k, child in enumerate(tree):
        for grown in _attach_leaf(child):
            rest = tree[:k] + tree[k + 1:]
            yield tuple(sorted(rest + (grown,)))


@lru_cache(maxsize=None)
def rooted_trees(n: int) -> tuple:
    """All rooted trees with ``n`` nodes (1, 1, 2, 4, 9, 20, ... of them)."""
    if n == 1:
        return ((),)
    found = set()
    for t in rooted_trees(n - 1):
        found.update(_attach_leaf(t))
    return tuple(sorted(found))


def tree_order(t) -> int:
    return 1 + sum(tree_order(c) for c in t)


def tree_density(t) -> int:
    out = tree_order(t)
    for c in t:
        out *= tree_density(c)
    return out


def _elementary_weight(t, A):
    phi = np.ones(A.shape[0])
    for c in t:
        phi = phi * (A @ _elementary_weight(c, A))
    return phi


def order_condition_residuals(tab: ButcherTableau, order: int) -> list[tuple[tuple, float]]:
    """``(tree, b.Phi(tree) - 1/gamma(tree))`` for every tree up to ``order``."""
    out = []
    for n in range(1, order + 1):
        for t in rooted_trees(n):
            out.append((t, float(tab.b @ _elementary_weight(t, tab.A) - 1.0 / tree_density(t))))
    return out
