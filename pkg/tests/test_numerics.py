import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate as sp_integrate

from errorcalc import linalg, quadrature, rng
from errorcalc.quadrature import integrate


@pytest.mark.parametrize("fn, lo, hi", [
    (np.exp, 0.0, 1.0),
    (lambda x: np.exp(-x**2 / 2), -np.inf, np.inf),
    (lambda x: 1 / (1 + x**2), 0.0, np.inf),
    (lambda x: np.sqrt(x), 0.0, 4.0),
    (lambda x: np.log(x), 0.0, 1.0),
])
def test_integrate_matches_scipy(fn, lo, hi):
    expected, _ = sp_integrate.quad(fn, lo, hi, epsabs=1e-13, limit=200)
    assert integrate(fn, lo, hi, atol=1e-11).value == pytest.approx(expected, abs=1e-9)


def test_integrate_closed_forms():
    assert integrate(lambda x: np.exp(-x**2 / 2), -np.inf, np.inf).value == pytest.approx(math.sqrt(2 * math.pi), abs=1e-10)
    assert integrate(np.sin, 0.0, math.pi).value == pytest.approx(2.0, abs=1e-12)


def test_default_tolerance_env(monkeypatch):
    monkeypatch.setenv("ERRORCALC_TOL", "1e-7")
    assert quadrature.default_tolerance() == 1e-7
    monkeypatch.delenv("ERRORCALC_TOL")
    assert quadrature.default_tolerance() > 0


sym = hnp.arrays(np.float64, (3, 3), elements=st.floats(-5, 5)).map(lambda a: (a + a.T) / 2)


@settings(max_examples=60, deadline=None)
@given(sym)
def test_jacobi_eigh_matches_numpy(a):
    w, v = linalg.jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-10)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)
    np.testing.assert_allclose(v.T @ v, np.eye(3), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
def test_inverse_and_sqrtm_on_spd(b):
    a = b @ b.T + 0.5 * np.eye(3)
    np.testing.assert_allclose(linalg.inverse(a), np.linalg.inv(a), rtol=1e-9, atol=1e-10)
    r = linalg.sqrtm(a)
    np.testing.assert_allclose(r, r.T, atol=1e-12)
    np.testing.assert_allclose(r @ r, a, atol=1e-9)
    assert linalg.sqrt_det(a) == pytest.approx(math.sqrt(np.linalg.det(a)), rel=1e-9)


def test_batched_inverse():
    a = np.array([np.diag([1.0, 2.0]), [[2.0, 1.0], [1.0, 2.0]]])
    np.testing.assert_allclose(linalg.inverse(a), np.linalg.inv(a), atol=1e-12)


def test_block_diag():
    np.testing.assert_array_equal(linalg.block_diag(np.eye(1) * 2, np.eye(2) * 3), np.diag([2.0, 3.0, 3.0]))


def test_stream_is_reproducible_and_indexed():
    a = rng.stream(5, 1, 2).normal(size=4)
    np.testing.assert_array_equal(a, rng.stream(5, 1, 2).normal(size=4))
    assert not np.array_equal(a, rng.stream(5, 1, 3).normal(size=4))
