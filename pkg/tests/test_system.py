import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbt.errors import ParseError
from stochbt.system import (
    ControlSignal, HorizonConfig, StochasticSystem, load_system, random_stable_system,
    save_system, stability_check, system_from_dict, system_to_dict, validate,
)


def test_scalar_noisy_stability(scalar_noisy):
    rep = stability_check(scalar_noisy)
    assert rep.stable
    assert rep.spectral_abscissa == pytest.approx(-1.75)


def test_deterministic_stability_matches_eigs():
    A = np.array([[-1.0, 3.0], [0.0, -0.5]])
    rep = stability_check(StochasticSystem.create(A))
    assert rep.spectral_abscissa == pytest.approx(2 * np.max(np.linalg.eigvals(A).real))


def test_noise_can_destabilize():
    s = StochasticSystem.create([[-1.0]], N=[[[1.5]]])
    rep = stability_check(s)
    assert not rep.stable
    assert rep.spectral_abscissa == pytest.approx(0.25)


def test_validate_reports_shape_problems():
    s = StochasticSystem.create(np.eye(2) * -1.0)
    bad = s.replace(B=np.ones((3, 1)))
    msgs = validate(bad)
    assert any(m.startswith("B: dimension mismatch") for m in msgs)
    assert validate(s) == []


def test_validate_rejects_indefinite_K():
    s = StochasticSystem.create(-np.eye(2), N=[np.eye(2), np.eye(2)], K=[[1.0, 2.0], [2.0, 1.0]])
    assert any("K not PSD" in m for m in validate(s))


def test_json_roundtrip(tmp_path):
    s = random_stable_system(4, 3, m=2, p=2, q=2, d=2, label="rt")
    path = tmp_path / "s.json"
    save_system(s, path)
    t = load_system(path)
    for key in ("A", "B", "C", "D", "X0", "K"):
        np.testing.assert_array_equal(getattr(s, key), getattr(t, key))
    assert t.label == "rt" and t.dims == s.dims


def test_missing_field_named(scalar_noisy):
    obj = system_to_dict(scalar_noisy)
    del obj["K"]
    with pytest.raises(ParseError) as exc:
        system_from_dict(obj)
    assert exc.value.field == "K"


def test_bad_json_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "n": 1,\n oops\n}')
    with pytest.raises(ParseError) as exc:
        load_system(path)
    assert exc.value.line == 3


def test_dims_disagree(scalar_noisy):
    obj = system_to_dict(scalar_noisy)
    obj["n"] = 2
    with pytest.raises(ParseError):
        system_from_dict(json.loads(json.dumps(obj)))


def test_arrays_are_read_only(scalar_noisy):
    with pytest.raises(ValueError):
        scalar_noisy.A[0, 0] = 1.0


def test_horizon():
    h = HorizonConfig(T=1.0, dt=0.25)
    assert h.steps == 4
    np.testing.assert_allclose(h.times, [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        HorizonConfig(T=1.0, dt=0.0)


def test_control_signals():
    h = HorizonConfig(T=1.0, dt=0.25)
    np.testing.assert_array_equal(ControlSignal.step(2.0, onset=0.5).grid(h, 1)[:, 0], [0, 0, 2, 2])
    g = ControlSignal.sine([1.0, -1.0], omega=2.0).grid(h, 2)
    np.testing.assert_allclose(g[:, 1], -np.sin(2.0 * h.times[:4]))
    c = ControlSignal.from_dict(ControlSignal.sine([1.0], 3.0).to_dict())
    assert c.kind == "sine" and c.omega == 3.0
    with pytest.raises(ValueError):
        ControlSignal.from_grid(np.ones((3, 1))).grid(h, 1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), q=st.integers(1, 3))
def test_random_systems_are_stable(seed, n, q):
    s = random_stable_system(seed, n, q=q)
    assert validate(s) == []
    assert stability_check(s).spectral_abscissa < -0.2


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 5))
def test_stability_invariant_under_similarity(seed, n):
    rng = np.random.default_rng(seed)
    s = random_stable_system(rng, n, q=2)
    T = rng.standard_normal((n, n)) + 3 * np.eye(n)
    a = stability_check(s).spectral_abscissa
    b = stability_check(s.transformed(T)).spectral_abscissa
    assert b == pytest.approx(a, rel=1e-7, abs=1e-9)
