import numpy as np
import pytest
from hypothesis import given, strategies as st

from stratatrack import linalg
from oracles import power_iteration


def low_rank(rng, m, n, r):
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n)) if r else np.zeros((m, n))


@pytest.mark.parametrize("shape", [(5, 5), (7, 3), (3, 7), (1, 4)])
def test_svd_reconstructs(shape):
    A = np.random.default_rng(0).standard_normal(shape)
    U, S, V = linalg.svd(A)
    np.testing.assert_allclose((U * S) @ V.T, A, atol=1e-12)
    assert np.all(np.diff(S) <= 0)


def test_svd_full_gives_square_factors():
    U, S, V = linalg.svd(np.ones((4, 2)), full=True)
    assert U.shape == (4, 4) and V.shape == (2, 2)
    np.testing.assert_allclose(U.T @ U, np.eye(4), atol=1e-12)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_svd_rejects_non_finite(bad):
    A = np.eye(3)
    A[1, 2] = bad
    with pytest.raises(ValueError):
        linalg.svd(A)


@given(n=st.integers(1, 8), r=st.integers(0, 8), seed=st.integers(0, 2**31))
def test_penrose_identities(n, r, seed):
    B = low_rank(np.random.default_rng(seed), n, n, min(r, n))
    A = B @ B.T
    P = linalg.pseudo_inverse(A)
    scale = max(1.0, np.abs(A).max()) * max(1.0, np.abs(P).max())
    tol = 1e-8 * scale ** 2
    np.testing.assert_allclose(A @ P @ A, A, atol=tol)
    np.testing.assert_allclose(P @ A @ P, P, atol=tol)
    np.testing.assert_allclose((A @ P).T, A @ P, atol=tol)
    np.testing.assert_allclose((P @ A).T, P @ A, atol=tol)


def test_pseudo_inverse_known_values():
    np.testing.assert_allclose(linalg.pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    np.testing.assert_allclose(linalg.pseudo_inverse(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(linalg.pseudo_inverse(np.zeros((2, 2))), np.zeros((2, 2)))


def test_pseudo_inverse_rank_two():
    B = np.random.default_rng(3).standard_normal((2, 3))
    C = B.T @ B
    np.testing.assert_allclose(C @ linalg.pseudo_inverse(C) @ C, C, atol=1e-8)


def test_pseudo_inverse_rejects_non_square():
    with pytest.raises(ValueError):
        linalg.pseudo_inverse(np.ones((2, 3)))


def test_svd_small_cases():
    U, S, V = linalg.svd(np.eye(2))
    np.testing.assert_allclose(S, [1.0, 1.0])
    np.testing.assert_allclose(np.abs(U), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(linalg.svd(np.diag([3.0, 0.0])).S, [3.0, 0.0])


def test_svd_large_reconstruction():
    A = np.random.default_rng(1).standard_normal((400, 400))
    U, S, V = linalg.svd(A)
    assert np.abs((U * S) @ V.T - A).max() <= 1e-9 * max(1.0, np.abs(A).max())
    assert np.abs(U.T @ U - np.eye(400)).max() <= 1e-10


@pytest.mark.parametrize("C,expected", [
    (np.diag([1.0, 0.0]), np.diag([1.0, 0.0])),
    (np.diag([2.0, 5.0]), np.eye(2)),
])
def test_range_projector_examples(C, expected):
    np.testing.assert_allclose(linalg.range_projector(C), expected, atol=1e-12)


def test_range_projector_rank_one():
    v = np.array([1.0, 2.0, 2.0]) / 3.0
    np.testing.assert_allclose(linalg.range_projector(np.outer(v, v)), np.outer(v, v), atol=1e-10)


@given(n=st.integers(1, 6), r=st.integers(0, 6), seed=st.integers(0, 2**31))
def test_range_projector_is_orthogonal_projection(n, r, seed):
    rng = np.random.default_rng(seed)
    B = low_rank(rng, n, n, min(r, n))
    A = B @ B.T
    P = linalg.range_projector(A)
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    np.testing.assert_allclose(P @ A, A, atol=1e-8 * max(1.0, np.abs(A).max()))
    assert linalg.numerical_rank(A) == min(r, n)


@pytest.mark.parametrize("seed", range(5))
def test_operator_norm_matches_power_iteration(seed):
    A = np.random.default_rng(seed).standard_normal((5, 5))
    assert linalg.operator_norm(A) == pytest.approx(power_iteration(A), rel=1e-8)


@pytest.mark.parametrize("A,expected", [(np.eye(4), 1.0), (np.diag([3.0, 1.0]), 3.0), (np.zeros((2, 2)), 0.0)])
def test_operator_norm_examples(A, expected):
    assert linalg.operator_norm(A) == pytest.approx(expected)
