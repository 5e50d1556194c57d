"""Explicit invariants-preserving Runge-Kutta integration.

An explicit RK predictor is followed by one explicit Newton-projection
correction that pulls the state back towards the invariant manifold.
"""

from .core import (
    CollisionError,
    ConservativeSystem,
    ConvergenceError,
    GridShape,
    IntegrationError,
    Invariant,
    InvariantSet,
    NonFiniteError,
    SingularDirectionError,
    devectorize,
    evaluate_invariants,
    invariant_gradients,
    vectorize,
)
from .projection import (
    NewtonPolicy,
    ProjectionDirection,
    eip_lambda,
    eip_step,
    lambda_star_harmonic,
    newton_projection_step,
)
from .rk import ButcherTableau, rk_step, tableau

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau",
    "CollisionError",
    "ConservativeSystem",
    "ConvergenceError",
    "GridShape",
    "IntegrationError",
    "Invariant",
    "InvariantSet",
    "NewtonPolicy",
    "NonFiniteError",
    "ProjectionDirection",
    "SingularDirectionError",
    "devectorize",
    "eip_lambda",
    "eip_step",
    "evaluate_invariants",
    "invariant_gradients",
    "lambda_star_harmonic",
    "newton_projection_step",
    "rk_step",
    "tableau",
    "vectorize",
]
