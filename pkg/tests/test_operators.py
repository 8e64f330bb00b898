import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbt import operators as ops
from stochbt.errors import CapacityError
from stochbt.system import random_stable_system


def _sym(rng, n):
    X = rng.standard_normal((n, n))
    return X + X.T


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 5), q=st.integers(1, 3))
def test_L_and_Lstar_are_adjoint(seed, n, q):
    rng = np.random.default_rng(seed)
    s = random_stable_system(rng, n, q=q)
    X, Y = _sym(rng, n), _sym(rng, n)
    lhs = np.trace(ops.op_L(s, X) @ Y)
    rhs = np.trace(X @ ops.op_Lstar(s, Y))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 5), q=st.integers(1, 3),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_operators_linear(seed, n, q, a, b):
    rng = np.random.default_rng(seed)
    s = random_stable_system(rng, n, q=q, m=2)
    X, Y = _sym(rng, n), _sym(rng, n)
    for op in (ops.op_L, ops.op_Lstar, ops.op_S):
        np.testing.assert_allclose(op(s, a * X + b * Y), a * op(s, X) + b * op(s, Y), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 5), q=st.integers(1, 4))
def test_kron_matrix_matches_apply(seed, n, q):
    rng = np.random.default_rng(seed)
    s = random_stable_system(rng, n, q=q)
    X = _sym(rng, n)
    for kind, op in (("L", ops.op_L), ("Lstar", ops.op_Lstar)):
        Kmat = ops.kron_matrix(s, kind).matrix
        np.testing.assert_allclose(ops.unvec(Kmat @ ops.vec(X), n), op(s, X), atol=1e-10)


def test_U_operator(scalar_noisy):
    s = scalar_noisy.replace(M=(np.array([[2.0]]),))
    # U(X) = gamma - k M X M
    assert ops.op_U(s, np.array([[0.5]]), 3.0)[0, 0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ops.op_U(s, np.array([[0.5]]), 0.0)


def test_dimension_mismatch(scalar_noisy):
    with pytest.raises(ValueError):
        ops.op_L(scalar_noisy, np.eye(2))


def test_capacity_limit():
    s = random_stable_system(0, 4)
    with pytest.raises(CapacityError):
        ops.kron_matrix(s, "L", n_max=3)


def test_vec_is_column_stacking():
    X = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ops.vec(X), [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(ops.unvec(ops.vec(X), 2, 3), X)


def test_psd_check():
    assert ops.psd_check(np.diag([1.0, 0.0])).is_psd
    assert not ops.psd_check(np.diag([1.0, -1e-3])).is_psd
