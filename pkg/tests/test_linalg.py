import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from structprune import linalg
from structprune.errors import InvalidInputError, NumericalError

from oracles import (
    covariance_loops,
    eig2_charpoly,
    eig3_charpoly,
    grid_search_line,
    line_sse,
    normal_equations,
    softmax_direct,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


# -- covariance ------------------------------------------------------------


def test_covariance_hand_example():
    np.testing.assert_allclose(linalg.covariance([[1, 0], [-1, 0]]), [[2, 0], [0, 0]], atol=0)


def test_covariance_identical_rows_is_zero():
    assert np.all(linalg.covariance([[3.0, -1.0, 2.0]] * 2) == 0.0)


def test_covariance_matches_loops():
    X = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_allclose(linalg.covariance(X), covariance_loops(X), atol=1e-10)


def test_covariance_needs_two_rows():
    with pytest.raises(InvalidInputError):
        linalg.covariance([[1.0, 2.0]])


@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 3, elements=finite))
def test_covariance_shift_invariant(X, shift):
    C = linalg.covariance(X)
    np.testing.assert_allclose(linalg.covariance(X + shift), C, atol=1e-9 * (1 + np.abs(C).max()))
    assert np.array_equal(C, C.T)


# -- eigendecomposition ----------------------------------------------------


def check_eig(S, e):
    Q, lam = e.eigenvectors, e.eigenvalues
    n = S.shape[0]
    assert np.abs(Q.T @ Q - np.eye(n)).max() <= 1e-8
    recon = Q @ np.diag(lam) @ Q.T
    assert np.abs(recon - S).max() <= 1e-6 * max(np.abs(S).max(), 1e-300)
    assert np.all(np.diff(lam) <= 0)


def test_eig_identity():
    e = linalg.sym_eig(np.eye(5))
    np.testing.assert_array_equal(e.eigenvalues, np.ones(5))


def test_eig_2x2_example():
    e = linalg.sym_eig([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(e.eigenvalues, eig2_charpoly([[2, 1], [1, 2]]), atol=1e-12)
    np.testing.assert_allclose(e.eigenvalues, [3.0, 1.0], atol=1e-12)
    v0, v1 = e.eigenvectors[:, 0], e.eigenvectors[:, 1]
    r = 1 / math.sqrt(2)
    assert np.allclose(np.abs(v0), [r, r]) and abs(v0[0] * v0[1] - 0.5) < 1e-12
    assert np.allclose(np.abs(v1), [r, r]) and abs(v1[0] * v1[1] + 0.5) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_eig_small_charpoly(seed):
    rng = np.random.default_rng(seed)
    for n, oracle in ((2, eig2_charpoly), (3, eig3_charpoly)):
        A = rng.normal(size=(n, n))
        S = A + A.T
        np.testing.assert_allclose(linalg.sym_eig(S).eigenvalues, oracle(S), atol=1e-9)


def test_eig_random_5x5():
    A = np.random.default_rng(5).normal(size=(5, 5))
    S = A + A.T
    check_eig(S, linalg.sym_eig(S))


def test_eig_covariance_is_nonnegative():
    X = np.random.default_rng(2).normal(size=(10, 20))  # rank-deficient scatter
    e = linalg.sym_eig(linalg.covariance(X))
    assert e.eigenvalues.min() >= -1e-9 * e.eigenvalues.max()


def test_eig_zero_matrix():
    e = linalg.sym_eig(np.zeros((3, 3)))
    assert np.all(e.eigenvalues == 0)
    np.testing.assert_array_equal(e.eigenvectors, np.eye(3))


def test_eig_ties_keep_index_order():
    e = linalg.sym_eig(np.diag([1.0, 2.0, 2.0, 0.5]))
    np.testing.assert_array_equal(e.eigenvalues, [2.0, 2.0, 1.0, 0.5])
    np.testing.assert_array_equal(np.abs(e.eigenvectors[:, 0]), [0, 1, 0, 0])
    np.testing.assert_array_equal(np.abs(e.eigenvectors[:, 1]), [0, 0, 1, 0])


def test_eig_reports_nonconvergence():
    A = np.random.default_rng(0).normal(size=(8, 8))
    with pytest.raises(NumericalError) as err:
        linalg.sym_eig(A + A.T, max_sweeps=1)
    assert err.value.residual > 0


def test_eig_rejects_nonsquare_and_nan():
    with pytest.raises(InvalidInputError):
        linalg.sym_eig(np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        linalg.sym_eig([[np.nan, 0], [0, 1]])


# -- pearson / cosine ------------------------------------------------------


def test_pearson_examples():
    assert linalg.pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-15)
    assert linalg.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert linalg.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-14)


def test_pearson_zero_variance_is_zero():
    assert linalg.pearson([2, 2, 2], [1, 2, 3]) == 0.0


def test_pearson_length_mismatch():
    with pytest.raises(InvalidInputError):
        linalg.pearson([1, 2], [1, 2, 3])


@given(
    arrays(np.float64, 12, elements=finite),
    arrays(np.float64, 12, elements=finite),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_pearson_affine_invariant(a, b, c, d):
    if np.var(a) < 1e-6 or np.var(b) < 1e-6:
        return
    assert linalg.pearson(a, c * b + d) == pytest.approx(linalg.pearson(a, b), abs=1e-10)


def test_cosine_examples():
    assert linalg.cosine([1, 2], [1, 2]) == pytest.approx(1.0)
    assert linalg.cosine([1, 0, 0], [0, 1, 0]) == 0.0
    assert linalg.cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(InvalidInputError):
        linalg.cosine([0, 0], [1, 0])


# -- line fit --------------------------------------------------------------


def test_fit_exact_line():
    x = np.linspace(-3, 4, 9)
    A, B = linalg.fit_line_1d(x, 2 * x + 1)
    assert A == pytest.approx(2.0, abs=1e-12) and B == pytest.approx(1.0, abs=1e-12)


def test_fit_constant_x():
    y = np.array([1.0, 4.0, -2.0, 5.0])
    A, B = linalg.fit_line_1d(np.full(4, 3.0), y)
    assert A == 1.0 and B == pytest.approx(np.mean(y - 3.0))


def test_fit_beats_grid_search():
    rng = np.random.default_rng(11)
    x = rng.normal(size=50)
    y = 1.3 * x - 0.7 + 0.3 * rng.normal(size=50)
    A, B = linalg.fit_line_1d(x, y)
    best, _, _ = grid_search_line(x, y)
    assert line_sse(x, y, A, B) <= best + 1e-12
    np.testing.assert_allclose([A, B], normal_equations(x, y), atol=1e-10)


def test_fit_length_mismatch():
    with pytest.raises(InvalidInputError):
        linalg.fit_line_1d([1, 2, 3], [1, 2])


@settings(max_examples=60)
@given(arrays(np.float64, 8, elements=finite), arrays(np.float64, 8, elements=finite))
def test_fit_never_worse_than_identity(x, y):
    A, B = linalg.fit_line_1d(x, y)
    ident = line_sse(x, y, 1.0, 0.0)
    assert line_sse(x, y, A, B) <= ident * (1 + 1e-9) + 1e-9


def test_fit_lines_matches_scalar():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 5))
    Y = 0.5 * X + rng.normal(size=(20, 5))
    A, B = linalg.fit_lines(X, Y)
    for i in range(5):
        a, b = normal_equations(X[:, i], Y[:, i])
        assert A[i] == pytest.approx(a, abs=1e-10) and B[i] == pytest.approx(b, abs=1e-10)


# -- softmax / sigmoid -----------------------------------------------------


def test_softmax_uniform_and_alpha_zero():
    np.testing.assert_allclose(linalg.softmax_scaled([0.3] * 4, 9.0), [0.25] * 4, atol=1e-15)
    np.testing.assert_allclose(linalg.softmax_scaled([0.1, 5.0, -2.0], 0.0), [1 / 3] * 3, atol=1e-15)


def test_softmax_worked_example():
    v = [0.8, 0.85, 0.9, 0.95]
    got = linalg.softmax_scaled(v, 7)
    np.testing.assert_allclose(got, softmax_direct(v, 7), atol=1e-12)
    np.testing.assert_allclose(got, [0.1372, 0.1947, 0.2762, 0.3920], atol=1e-4)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_large_inputs_stable():
    p = linalg.softmax_scaled([1000.0, 1001.0], 1.0)
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)


def test_sigmoid():
    assert linalg.sigmoid(0.0) == 0.5
    assert linalg.sigmoid(1.0) == pytest.approx(0.7310585786300049, abs=1e-15)
    xs = np.linspace(-40, 40, 81)
    np.testing.assert_allclose(linalg.sigmoid(xs) + linalg.sigmoid(-xs), 1.0, atol=1e-15)


@given(arrays(np.float64, 6, elements=st.floats(0, 1e6)), st.floats(1e-3, 1e3))
def test_eigenvalue_ratio_scale_invariance(M, c):
    if M.mean() <= 0:
        return
    np.testing.assert_allclose((c * M) / (c * M).mean(), M / M.mean(), rtol=1e-12, atol=1e-15)
