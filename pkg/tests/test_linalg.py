import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from proxbridge import linalg
from proxbridge.errors import ConditioningError



@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.integers(-5, 5).map(float)))
def test_pinv_penrose_conditions(a):
    p = linalg.pinv(a)
    scale = max(1.0, np.abs(a).max()) ** 2
    assert np.allclose(a @ p @ a, a, atol=1e-8 * scale)
    assert np.allclose(p @ a @ p, p, atol=1e-8 * max(1.0, np.abs(p).max()) ** 2)
    assert np.allclose((a @ p).T, a @ p, atol=1e-8)
    assert np.allclose((p @ a).T, p @ a, atol=1e-8)


def test_rank_and_null_space():
    a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    assert linalg.rank(a) == 1
    ns = linalg.null_space(a)
    assert ns.shape == (3, 2)
    assert np.allclose(a @ ns, 0, atol=1e-12)
    assert np.allclose(ns.T @ ns, np.eye(2))


def test_empty_inputs():
    assert linalg.pinv(np.zeros((0, 3))).shape == (3, 0)
    assert linalg.rank(np.zeros((0, 0))) == 0
    assert linalg.is_psd(np.zeros((0, 0)))


def test_matrix_sqrt_examples():
    assert np.allclose(linalg.matrix_sqrt_psd(np.eye(3)), np.eye(3))
    assert np.allclose(linalg.matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


@given(st.integers(0, 10_000))
def test_matrix_sqrt_reconstruction(seed):
    a = np.random.default_rng(seed).normal(size=(6, 6))
    k = a.T @ a
    r = linalg.matrix_sqrt_psd(k)
    assert np.allclose(r, r.T)
    assert np.abs(r @ r - k).max() <= 1e-9 * max(np.linalg.norm(k, 2), 1.0)


def test_matrix_sqrt_clips_round_off_and_rejects_asymmetry():
    k = np.diag([1.0, -1e-14])
    r = linalg.matrix_sqrt_psd(k)
    assert np.allclose(r @ r, np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        linalg.matrix_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_solve_psd_and_jitter(caplog):
    k = np.array([[2.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, 0.0])
    assert np.allclose(k @ linalg.solve_psd(k, b), b)
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = linalg.solve_psd(singular, np.array([1.0, 1.0]), jitter=1e-6)
    assert np.all(np.isfinite(x))
    assert "jitter" in caplog.text
    with pytest.raises(ConditioningError):
        linalg.solve_psd(np.diag([1.0, -1.0]), np.ones(2), jitter=1e-8)
