import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbt.strategies import (
    AuxiliarySpec, approach1_bound, approach1_reduce, approach2_bound, approach2_reduce,
    build_transformed_system, compute_W, initial_state_error_integral, u0_energy,
)
from stochbt.system import random_stable_system


def test_u0_energy_values():
    K = np.array([[1.0]])
    assert u0_energy(AuxiliarySpec.zero(), K, 5.0) == 5.0
    a = AuxiliarySpec.scalar(1.0, [0.5])
    beta = -2.0 + 0.25
    assert u0_energy(a, K, 5.0) == pytest.approx(math.expm1(beta * 5.0) / beta, rel=1e-12)
    flat = AuxiliarySpec.scalar(0.125, [0.5])
    assert flat.beta(K) == 0.0
    assert u0_energy(flat, K, 5.0) == 5.0


def test_transformed_system_layout():
    s = random_stable_system(0, 4, m=2, q=2, d=3)
    t = build_transformed_system(s, AuxiliarySpec.zero())
    assert t.m == 2 + 3
    np.testing.assert_allclose(t.B[:, 2:], s.A @ s.X0)
    np.testing.assert_allclose(t.D[:, 2:], s.C @ s.X0)
    assert not np.any(t.X0)
    a = AuxiliarySpec.scalar(0.5, [0.1, 0.2])
    t2 = build_transformed_system(s, a)
    np.testing.assert_allclose(t2.M[1][:, 2:], (s.N[1] - 0.2 * np.eye(4)) @ s.X0)


def test_scalar_gamma_count_checked():
    s = random_stable_system(0, 3, q=2)
    with pytest.raises(ValueError):
        build_transformed_system(s, AuxiliarySpec.scalar(1.0, [0.1]))


def test_approach1_full_order_bound_zero():
    s = random_stable_system(4, 3, q=2)
    res = approach1_reduce(s, AuxiliarySpec.zero(), 3, 1.0)
    assert approach1_bound(res, 1.0, 1.0, 5.0) == 0.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 6))
def test_W_trace_matches_error_oracle(seed, n):
    s = random_stable_system(seed, n, q=2, d=2)
    res = approach2_reduce(s, 1, 1)
    for rb in range(1, n + 1):
        w = compute_W(res.init_balanced, rb)
        oracle = initial_state_error_integral(res.init_balanced, rb)
        assert w.trace == pytest.approx(oracle, rel=1e-8, abs=1e-12)


def test_approach2_bound_terms():
    s = random_stable_system(6, 4, q=1)
    res = approach2_reduce(s, 2, 4)
    b = approach2_bound(res, 2.0, 3.0)
    assert b["aposteriori_term"] == pytest.approx(0.0, abs=1e-6)
    tail = float(np.sum(res.sigma[2:]))
    assert b["apriori_term"] == pytest.approx(2.0 * tail * 2.0)
    with pytest.raises(ValueError):
        approach2_bound(res, -1.0, 1.0)


def test_approach2_full_order_zero():
    s = random_stable_system(6, 3, q=2)
    res = approach2_reduce(s, 3, 3)
    assert approach2_bound(res, 1.0, 1.0)["total"] == pytest.approx(0.0, abs=1e-6)
