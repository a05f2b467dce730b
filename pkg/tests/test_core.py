import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metareg.core import (
    DimensionError,
    DomainError,
    InvariantError,
    NumericalError,
    ParameterError,
    RegParams,
    ShapeError,
    as_mask,
    as_scalar,
    as_vector,
    axpy,
    central_diff,
    central_diff_adjoint,
    check_same_shape,
    hadamard_mask,
    pixel_grid,
    zeros,
    zeros_vector,
)


def test_zeros_shapes():
    assert zeros(3, 2).shape == (2, 3)
    assert zeros_vector(3, 2).shape == (2, 2, 3)
    assert not zeros(4, 4).any()


@pytest.mark.parametrize("w,h", [(0, 3), (3, 0), (-1, 2)])
def test_zeros_rejects_empty(w, h):
    with pytest.raises(DimensionError):
        zeros(w, h)


def test_as_scalar_rejects_bad_input():
    with pytest.raises(ShapeError):
        as_scalar(np.zeros(4))
    with pytest.raises(DomainError):
        as_scalar([[0.0, np.nan]])
    with pytest.raises(ShapeError):
        as_vector(np.zeros((3, 2, 2)))
    with pytest.raises(DomainError):
        as_vector(np.full((2, 2, 2), np.inf))


def test_as_mask():
    m = as_mask([[0, 1], [1, 0]])
    assert m.dtype == bool
    assert m.tolist() == [[False, True], [True, False]]
    with pytest.raises(InvariantError):
        as_mask([[0, 2], [1, 0]])
    with pytest.raises(InvariantError):
        as_mask([[0.5, 1.0]])


def test_axpy_hand_values():
    np.testing.assert_array_equal(axpy(2.0, [[1.0, 2.0]], [[10.0, 20.0]]), [[12.0, 24.0]])
    with pytest.raises(ShapeError):
        axpy(1.0, np.zeros((2, 2)), np.zeros((2, 3)))


def test_hadamard_mask_is_positive_zero_outside():
    x = np.array([[-3.0, 5.0], [-0.0, 7.0]])
    out = hadamard_mask(x, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(out, [[0.0, 5.0], [0.0, 0.0]])
    outside = out[np.array([[1, 0], [1, 1]], bool)]
    assert not np.signbit(outside).any()


def test_pixel_grid_convention():
    x, y = pixel_grid(2, 3)
    assert x.tolist() == [[0, 1, 2], [0, 1, 2]]
    assert y.tolist() == [[0, 0, 0], [1, 1, 1]]


def test_check_same_shape():
    assert check_same_shape(np.zeros((2, 3)), np.zeros((2, 2, 3))) == (2, 3)
    with pytest.raises(ShapeError):
        check_same_shape(np.zeros((2, 3)), np.zeros((3, 2)))


def test_regparams_flat_round_trip(rng):
    p = RegParams(rng.normal(size=(3, 2, 4, 5)), rng.normal(size=(3, 4, 5)))
    q = RegParams.from_flat(p.flat(), 3, 4, 5)
    np.testing.assert_array_equal(q.v_sd, p.v_sd)
    np.testing.assert_array_equal(q.r_iv, p.r_iv)
    assert p.steps == 3 and p.shape == (4, 5)
    assert p.flat()[0] == p.v_sd[0, 0, 0, 0]


def test_regparams_validation():
    with pytest.raises(ShapeError):
        RegParams(np.zeros((2, 2, 3, 3)), np.zeros((3, 3, 3)))
    with pytest.raises(ParameterError):
        RegParams.zeros(0, 3, 3)


def test_numerical_error_carries_iteration():
    err = NumericalError("boom", iteration=7)
    assert err.iteration == 7
    assert isinstance(err, ArithmeticError)


def test_central_diff_hand_values():
    f = np.array([[0.0, 1.0, 4.0, 9.0]])
    np.testing.assert_allclose(central_diff(f, 1), [[1.0, 2.0, 4.0, 5.0]])
    with pytest.raises(DimensionError):
        central_diff(np.zeros((1, 3)), 0)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(2, 6)), elements=st.floats(-1, 1)),
    st.integers(0, 1),
    st.integers(0, 2**31 - 1),
)
def test_central_diff_adjoint_is_transpose(f, axis, seed):
    g = np.random.default_rng(seed).normal(size=f.shape)
    lhs = np.sum(central_diff(f, axis) * g)
    rhs = np.sum(f * central_diff_adjoint(g, axis))
    assert lhs == pytest.approx(rhs, abs=1e-12)
