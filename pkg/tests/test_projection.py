import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conservo.analysis import Method, convergence_study, estimate_order, run_invariant_study
from conservo.core import (
    ConservativeSystem,
    ConvergenceError,
    Invariant,
    InvariantSet,
    SingularDirectionError,
)
from conservo.projection import (
    ManifoldDriftWarning,
    NewtonPolicy,
    ProjectionDirection,
    eip_lambda,
    eip_step,
    lambda_star_harmonic,
    newton_projection_step,
)
from conservo.rk import rk_step, tableau
from conservo.systems import harmonic_oscillator, perturbed_kepler


def kepler_generic_point():
    """Kepler system re-anchored at a point away from perihelion.

    Perihelion is a symmetry point where leading error terms cancel, which
    hides the generic local orders.
    """
    k = perturbed_kepler()
    y = k.y0.copy()
    for _ in range(370):
        y = rk_step(k.rhs, y, 0.001, tableau("RK4"))
    return replace(k, y0=y, invariants=InvariantSet.at(k.invariants.invariants, y))


def slopes(hs, values):
    return np.diff(np.log(values)) / np.diff(np.log(hs))


# -- eip_lambda ---------------------------------------------------------------

def test_lambda_zero_residual():
    G = np.array([[1.0, 0.0], [0.5, 2.0], [0.0, 1.0]])
    np.testing.assert_array_equal(eip_lambda(np.zeros(2), G), [0.0, 0.0])


def test_lambda_single_invariant():
    assert eip_lambda([0.5], np.array([1.0, 2.0]))[0] == pytest.approx(-0.1, abs=1e-16)


def test_lambda_harmonic_closed_form():
    omega, y0, y_hat = 10.0, np.array([1.0, 0.0]), np.array([1.01, 0.02])
    g = 0.5 * omega * (y_hat @ y_hat - y0 @ y0)
    general = eip_lambda([g], omega * y_hat)[0]
    closed = -(1.0 / (2.0 * omega)) * (1.0 - (y0 @ y0) / (y_hat @ y_hat))
    assert abs(general - closed) <= 1e-15


def test_lambda_rejects_dependent_gradients():
    G = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(SingularDirectionError):
        eip_lambda([1e-8, 2e-8], G)
    lam = eip_lambda([1e-8, 2e-8], G, on_singular="lstsq")
    # minimum-norm solution still zeroes the linearised residual
    np.testing.assert_allclose(G.T @ G @ lam, [-1e-8, -2e-8], rtol=1e-10)


def test_lambda_scaling_independent_of_units():
    # columns differing by twelve orders of magnitude are still full rank
    G = np.array([[1e12, 0.0], [0.0, 1.0], [3e11, 0.5]])
    lam = eip_lambda([1.0, 1e-12], G)
    np.testing.assert_allclose(G.T @ G @ lam, [-1.0, -1e-12], rtol=1e-10)


def test_lambda_shape_check():
    with pytest.raises(ValueError):
        eip_lambda([1.0, 2.0], np.ones((3, 1)))


# -- eip_step -----------------------------------------------------------------

def zero_field_system():
    inv = [Invariant("Q", lambda y: float(y @ y), lambda y: 2.0 * y),
           Invariant("S", lambda y: float(y.sum()), lambda y: np.ones_like(y))]
    y0 = np.array([0.3, -1.2, 2.0])
    return ConservativeSystem("zero", 3, np.zeros_like, InvariantSet.at(inv, y0), y0)


@pytest.mark.parametrize("direction", list(ProjectionDirection))
def test_eip_step_stationary(direction):
    sys = zero_field_system()
    y = eip_step(sys, sys.y0, 0.5, tableau("RK4"), direction)
    np.testing.assert_array_equal(y, sys.y0)


def test_direction_parse():
    assert ProjectionDirection.parse("Midpoint") is ProjectionDirection.MIDPOINT
    with pytest.raises(ValueError, match="predicted"):
        ProjectionDirection.parse("sideways")


def test_manifold_warning():
    sys = harmonic_oscillator(10.0)
    tab = tableau("RK4")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eip_step(sys, sys.y0, 0.01, tab)
    with pytest.warns(ManifoldDriftWarning):
        eip_step(sys, np.array([1.001, 0.0]), 0.01, tab)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eip_step(sys, np.array([1.001, 0.0]), 0.01, tab, check_entry=False)


def test_table1_lambda_examples():
    # last step of the run to t = 1
    omega, tab = 10.0, tableau("RK4")
    sys = harmonic_oscillator(omega)
    out = {}
    for h, n in ((0.1, 10), (0.0125, 80)):
        y = sys.y0
        for _ in range(n):
            y_hat = rk_step(sys.rhs, y, h, tab)
            y, lam = eip_step(sys, y, h, tab, check_entry=False, return_lambda=True)
        out[h] = abs(lam[0] - lambda_star_harmonic(omega, sys.y0, y_hat))
    assert out[0.1] == pytest.approx(1.8688e-06, rel=5e-5)
    # round-off level: same order of magnitude as the tabulated 3.3307e-17
    assert 3.3307e-17 / 3 <= out[0.0125] <= 3 * 3.3307e-17


def test_correction_squares_the_residual():
    # for H = w/2 |y|^2 the corrected residual is exactly g^2 / (4 H(y_hat))
    sys = harmonic_oscillator(10.0)
    y_hat = rk_step(sys.rhs, sys.y0, 0.05, tableau("RK1"))
    g_hat = sys.invariants.evaluate(y_hat)[0]
    y = eip_step(sys, sys.y0, 0.05, tableau("RK1"))
    H_hat = 5.0 * float(y_hat @ y_hat)
    assert sys.invariants.evaluate(y)[0] == pytest.approx(g_hat**2 / (4.0 * H_hat), rel=1e-10)


# -- Newton comparator ----------------------------------------------------------

@pytest.mark.parametrize("direction", list(ProjectionDirection))
@pytest.mark.parametrize("name", ["RK1", "RK2", "RK3", "RK4", "RK5"])
def test_single_newton_step_is_eip(name, direction):
    sys = perturbed_kepler()
    tab = tableau(name)
    y_e = eip_step(sys, sys.y0, 0.03, tab, direction)
    y_n, iters, _ = newton_projection_step(sys, sys.y0, 0.03, tab, NewtonPolicy(1), direction)
    assert iters == 1
    np.testing.assert_array_equal(y_e, y_n)


def test_table2_examples():
    sys = harmonic_oscillator(10.0)
    two = run_invariant_study(sys, Method("newton-projection", "RK2", newton=NewtonPolicy(2)), 0.1, 1.0)
    one = run_invariant_study(sys, Method("eip", "RK2"), 0.1, 1.0)
    assert two.max_residual() == pytest.approx(1.9303e-04, rel=5e-5)
    assert one.max_residual() == pytest.approx(7.0644e-02, rel=5e-5)


def test_converged_newton_on_kepler():
    sys = perturbed_kepler()
    tab = tableau("RK4")
    y, iters, final, lam = newton_projection_step(
        sys, sys.y0, 0.03, tab, NewtonPolicy(20, 1e-14), return_lambda=True)
    assert final <= 1e-14
    assert np.max(np.abs(sys.invariants.evaluate(y))) <= 1e-13
    _, lam_hat = eip_step(sys, sys.y0, 0.03, tab, return_lambda=True)
    # both multipliers are O(h^5); they differ at O(h^10), i.e. O(lam^2)
    scale = np.max(np.abs(lam))
    assert scale > 1e-9
    assert np.max(np.abs(lam - lam_hat)) <= 10.0 * scale**2


def test_newton_lambda_gap_order():
    # |lam_converged - lam_hat| = O(h^{2(p+1)}); RK1 keeps it above round-off
    sys = kepler_generic_point()
    tab = tableau("RK1")
    hs = [0.03, 0.015, 0.0075]
    gaps = []
    for h in hs:
        _, _, _, lam = newton_projection_step(sys, sys.y0, h, tab, NewtonPolicy(30, 1e-15),
                                              return_lambda=True)
        _, lam_hat = eip_step(sys, sys.y0, h, tab, return_lambda=True)
        gaps.append(np.max(np.abs(lam - lam_hat)))
    assert slopes(hs, gaps)[-1] == pytest.approx(4.0, abs=0.3)


def test_newton_reports_non_convergence():
    sys = perturbed_kepler()
    with pytest.raises(ConvergenceError) as info:
        newton_projection_step(sys, sys.y0, 0.1, tableau("RK1"), NewtonPolicy(1, 1e-30))
    assert info.value.residual > 0


def test_newton_policy_validation():
    with pytest.raises(ValueError):
        NewtonPolicy(0)
    with pytest.raises(ValueError):
        NewtonPolicy(2, -1.0)


def test_newton_singular_jacobian():
    sys = zero_field_system()
    bad = replace(sys, rhs=lambda y: np.array([1.0, 1.0, 1.0]),
                  invariants=InvariantSet.at(
                      [sys.invariants.invariants[1], sys.invariants.invariants[1]], sys.y0))
    with pytest.raises(SingularDirectionError):
        newton_projection_step(bad, bad.y0, 0.1, tableau("RK1"))


# -- lambda_star ----------------------------------------------------------------

def test_lambda_star_examples():
    y0 = np.array([1.0, 0.0])
    assert lambda_star_harmonic(10.0, y0, np.array([0.6, 0.8])) == 0.0
    assert lambda_star_harmonic(10.0, y0, np.array([1.1, 0.0])) == pytest.approx(
        -(1.0 / 10.0) * (1.0 - 1.0 / 1.1), rel=1e-15)
    with pytest.raises(ValueError):
        lambda_star_harmonic(10.0, y0, np.zeros(2))
    with pytest.raises(ValueError):
        lambda_star_harmonic(0.0, y0, y0)


@given(st.floats(0.5, 1.5), st.floats(0, 2 * np.pi), st.floats(1.0, 20.0))
def test_lambda_star_matches_converged_newton(radius, angle, omega):
    y0 = np.array([1.0, 0.0])
    y_hat = radius * np.array([np.cos(angle), np.sin(angle)])
    sys = replace(harmonic_oscillator(omega, y0), rhs=lambda y: np.zeros(2))
    # with f = 0 the predictor is the identity, so y_n = y_hat
    _, _, _, lam = newton_projection_step(sys, y_hat, 1.0, tableau("RK1"),
                                          NewtonPolicy(60, 1e-15 * omega), check_entry=False,
                                          return_lambda=True)
    assert abs(lam[0] - lambda_star_harmonic(omega, y0, y_hat)) <= 1e-13


# -- order properties on Kepler ---------------------------------------------

@pytest.mark.parametrize("direction", list(ProjectionDirection))
@pytest.mark.parametrize("name, p", [("RK1", 1), ("RK2", 2)])
def test_invariant_residual_order(name, p, direction):
    sys = kepler_generic_point()
    tab = tableau(name)
    hs = [0.03, 0.015, 0.0075, 0.00375]
    res = [np.max(np.abs(sys.invariants.evaluate(eip_step(sys, sys.y0, h, tab, direction))))
           for h in hs]
    fit = np.polyfit(np.log(hs), np.log(res), 1)[0]
    assert fit == pytest.approx(2 * (p + 1), abs=0.3)
    assert slopes(hs, res)[-1] >= 2 * (p + 1) - 0.3


@pytest.mark.parametrize("direction", list(ProjectionDirection))
@pytest.mark.parametrize("name, p", [("RK1", 1), ("RK2", 2), ("RK3", 3), ("RK4", 4)])
def test_lambda_magnitude_order(name, p, direction):
    sys = kepler_generic_point()
    tab = tableau(name)
    hs = [0.03, 0.015, 0.0075, 0.00375]
    lams = [np.max(np.abs(eip_step(sys, sys.y0, h, tab, direction, return_lambda=True)[1]))
            for h in hs]
    assert np.polyfit(np.log(hs), np.log(lams), 1)[0] == pytest.approx(p + 1, abs=0.3)


@pytest.mark.parametrize("direction", list(ProjectionDirection))
@pytest.mark.parametrize("name, p", [("RK1", 1), ("RK2", 2), ("RK3", 3), ("RK4", 4)])
def test_global_order_matches_base(name, p, direction):
    sys = perturbed_kepler()
    steps = [0.02, 0.01, 0.005, 0.0025] if p < 4 else [0.01, 0.005, 0.0025, 0.00125]
    series = convergence_study(sys, Method("eip", name, direction=direction), steps, 1.0, "self")
    assert estimate_order(series)[-1] == pytest.approx(p, abs=0.2)
