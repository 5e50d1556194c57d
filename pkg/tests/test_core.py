import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conservo.core import (
    ConservativeSystem,
    GridShape,
    Invariant,
    InvariantSet,
    NonFiniteError,
    as_state,
    devectorize,
    evaluate_invariants,
    invariant_gradients,
    vectorize,
)
from conservo.systems import harmonic_oscillator, perturbed_kepler

from conftest import fd_gradient

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_as_state_rejects_bad_input():
    with pytest.raises(ValueError):
        as_state(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        as_state(np.zeros(3), d=4)
    with pytest.raises(NonFiniteError):
        as_state([1.0, np.nan])
    assert as_state([1, 2]).dtype == np.float64


def test_harmonic_residual_at_reference():
    sys = harmonic_oscillator(10.0, (1.0, 0.0))
    assert sys.invariants.reference_values[0] == 5.0
    np.testing.assert_array_equal(evaluate_invariants(sys.invariants, [1.0, 0.0]), [0.0])


def test_kepler_residual_at_reference():
    sys = perturbed_kepler(0.6)
    assert np.all(np.abs(evaluate_invariants(sys.invariants, sys.y0)) <= 1e-13)


def test_kepler_residual_hand_computed():
    # (0.4, 0, 0, 2) is the e = 0.6 initial condition itself.
    sys = perturbed_kepler(0.6)
    np.testing.assert_array_equal(sys.invariants.evaluate(np.array([0.4, 0.0, 0.0, 2.0])), [0.0, 0.0])
    y = np.array([0.5, 0.0, 0.0, 2.0])
    H_ref = 0.5 * 4.0 - 1.0 / 0.4 - 0.005 / (2.0 * 0.4**3)
    H_y = 0.5 * 4.0 - 1.0 / 0.5 - 0.005 / (2.0 * 0.5**3)
    expected = [H_y - H_ref, 0.5 * 2.0 - 0.4 * 2.0]
    np.testing.assert_allclose(evaluate_invariants(sys.invariants, y), expected, rtol=1e-14)


def test_dimension_mismatch_is_an_error():
    sys = perturbed_kepler()
    with pytest.raises(ValueError):
        evaluate_invariants(sys.invariants, np.zeros(3), d=sys.dimension)
    with pytest.raises(ValueError):
        invariant_gradients(sys.invariants, np.zeros(5), d=sys.dimension)


def test_non_finite_invariant_names_the_culprit():
    bad = Invariant("broken", lambda y: float("nan"), lambda y: np.full_like(y, np.nan))
    inv = InvariantSet((bad,), [0.0])
    with pytest.raises(NonFiniteError, match="broken"):
        inv.evaluate(np.ones(2))
    with pytest.raises(NonFiniteError, match="broken"):
        inv.gradients(np.ones(2))


def test_gradient_examples():
    osc = harmonic_oscillator(10.0)
    np.testing.assert_array_equal(invariant_gradients(osc.invariants, [1.0, 0.0])[:, 0], [10.0, 0.0])
    kep = perturbed_kepler()
    G = invariant_gradients(kep.invariants, [0.4, 0.0, 0.0, 2.0])
    np.testing.assert_array_equal(G[:, 1], [2.0, 0.0, 0.0, 0.4])


def test_kepler_gradients_match_finite_differences(rng):
    sys = perturbed_kepler()
    for _ in range(5):
        y = sys.y0 + 0.1 * rng.standard_normal(4)
        G = sys.invariants.gradients(y)
        for i, inv in enumerate(sys.invariants.invariants):
            fd = fd_gradient(inv.value, y)
            assert np.linalg.norm(G[:, i] - fd) <= 1e-6 * np.linalg.norm(fd)


def test_subset_keeps_reference_values():
    sys = perturbed_kepler()
    sub = sys.invariants.subset(["L"])
    assert sub.names == ("L",)
    assert sub.reference_values[0] == sys.invariants.reference_values[1]
    with pytest.raises(KeyError):
        sys.invariants.subset(["Q"])
    assert sys.with_invariants(["H"]).invariants.l == 1


def test_on_singular_policy_validated():
    with pytest.raises(ValueError):
        InvariantSet((), [], on_singular="ignore")


def test_vectorize_convention_real():
    np.testing.assert_array_equal(vectorize(np.array([[1.0, 2.0], [3.0, 4.0]])), [1, 3, 2, 4])


def test_vectorize_convention_complex():
    grid = np.array([[1 + 5j, 2 + 6j], [3 + 7j, 4 + 8j]])
    v = vectorize(grid)
    assert v.shape == (8,)
    np.testing.assert_array_equal(v, [1, 3, 2, 4, 5, 7, 6, 8])


def test_vectorize_shape_mismatch():
    with pytest.raises(ValueError):
        vectorize(np.zeros((2, 3)), GridShape((3, 2)))
    with pytest.raises(ValueError):
        devectorize(np.zeros(5), GridShape((2, 2)))


def test_grid_shape_size():
    assert GridShape((4, 6), complex=True).size == 48
    assert GridShape((3, 3, 3)).rank == 3
    with pytest.raises(ValueError):
        GridShape((2, 2, 2, 2))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_vectorize_round_trip_real(a):
    out = devectorize(vectorize(a), GridShape(a.shape))
    assert out.tobytes() == np.asarray(a, dtype=np.float64).tobytes()


@given(
    arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3)),
           elements=finite),
    st.floats(-3, 3),
)
def test_vectorize_round_trip_complex(a, s):
    z = a + 1j * s * a[::-1]
    out = devectorize(vectorize(z), GridShape(z.shape, complex=True))
    np.testing.assert_array_equal(out, z)


def test_system_checks_grid_size():
    inv = InvariantSet((), np.zeros(0))
    with pytest.raises(ValueError):
        ConservativeSystem("x", 4, lambda y: y, inv, np.zeros(4), grid=GridShape((3,)))
