import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from levyasclt.errors import DimensionMismatch, NotStabilizable, Singular
from levyasclt.linalg import is_positive_definite, logdet_sq, lyapunov_solve, psd_order_leq


def kron_oracle(u):
    """Row-major vectorization, solved independently of the library's layout."""
    d = u.shape[0]
    eye = np.eye(d)
    # direct assembly of R U + U^T R entry by entry
    op = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            row = i * d + j
            for k in range(d):
                op[row, i * d + k] += u[k, j]
                op[row, k * d + j] += u[k, i]
    return np.linalg.solve(op, eye.reshape(-1)).reshape(d, d)


def random_stable(rng, d):
    a = rng.standard_normal((d, d))
    p = a @ a.T + 0.5 * np.eye(d)
    k = rng.standard_normal((d, d))
    return p + (k - k.T) + 1e-3 * rng.standard_normal((d, d))


class TestLyapunov:
    @pytest.mark.parametrize("d", [1, 2, 5])
    def test_identity(self, d):
        np.testing.assert_allclose(lyapunov_solve(np.eye(d)), 0.5 * np.eye(d), atol=1e-14)

    def test_diagonal(self):
        np.testing.assert_allclose(lyapunov_solve(np.diag([1.0, 2.0])), np.diag([0.5, 0.25]), atol=1e-14)

    def test_jordan_block_against_kronecker_oracle(self):
        u = np.array([[1.0, 1.0], [0.0, 1.0]])
        expected = kron_oracle(u)
        np.testing.assert_allclose(expected, [[0.5, -0.25], [-0.25, 0.75]], atol=1e-14)
        np.testing.assert_allclose(lyapunov_solve(u), expected, atol=1e-13)

    def test_not_stabilizable(self):
        with pytest.raises(NotStabilizable):
            lyapunov_solve(np.diag([1.0, -0.5]))

    def test_random_residuals(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            d = int(rng.integers(1, 6))
            u = random_stable(rng, d)
            r = lyapunov_solve(u)
            assert np.linalg.norm(r @ u + u.T @ r - np.eye(d)) <= 1e-10
            assert np.array_equal(r, r.T)
            assert is_positive_definite(r)

    def test_matches_oracle_on_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            u = random_stable(rng, 3)
            np.testing.assert_allclose(lyapunov_solve(u), kron_oracle(u), rtol=1e-9, atol=1e-12)


class TestLogdet:
    def test_sqrt_scalar(self):
        t = np.e - 1
        assert logdet_sq(np.sqrt(1 + t) * np.eye(2)) == pytest.approx(2.0, abs=1e-14)

    def test_identity(self):
        assert logdet_sq(np.eye(4)) == 0.0

    def test_triangular_hand_determinant(self):
        # det = 2*3 - 1*0
        assert logdet_sq([[2.0, 1.0], [0.0, 3.0]]) == pytest.approx(2 * np.log(6.0), rel=1e-14)
        assert logdet_sq([[2.0, 1.0], [0.0, 3.0]]) == pytest.approx(3.5835, abs=1e-4)

    def test_singular(self):
        with pytest.raises(Singular):
            logdet_sq([[1.0, 2.0], [2.0, 4.0]])

    def test_tiny_determinant_guard(self):
        with pytest.raises(Singular):
            logdet_sq(1e-160 * np.eye(2))

    def test_no_overflow_where_det_would(self):
        # det = 1e400 overflows, its log does not
        assert logdet_sq(1e200 * np.eye(2)) == pytest.approx(4 * 200 * np.log(10), rel=1e-12)

    def test_non_square(self):
        with pytest.raises(DimensionMismatch):
            logdet_sq(np.ones((2, 3)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_multiplicative(self, seed, d):
        rng = np.random.default_rng(seed)
        v = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        w = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        if min(np.linalg.svd(v, compute_uv=False).min(), np.linalg.svd(w, compute_uv=False).min()) < 1e-3:
            return
        assert logdet_sq(v @ w) == pytest.approx(logdet_sq(v) + logdet_sq(w), abs=1e-9)


class TestPositiveDefinite:
    def test_identity(self):
        assert is_positive_definite(np.eye(3))

    def test_indefinite(self):
        assert not is_positive_definite(np.diag([1.0, -1e-3]))

    def test_lyapunov_solution(self):
        r = lyapunov_solve([[1.0, 1.0], [0.0, 1.0]])
        # trace 1.25, det 0.3125
        assert np.trace(r) == pytest.approx(1.25)
        assert np.linalg.det(r) == pytest.approx(0.3125)
        assert is_positive_definite(r)

    def test_zero_and_nonfinite_are_false(self):
        assert not is_positive_definite(np.zeros((2, 2)))
        assert not is_positive_definite([[np.nan, 0.0], [0.0, 1.0]])

    def test_relative_tolerance(self):
        assert not is_positive_definite(np.diag([1.0, 1e-12]))
        assert is_positive_definite(np.diag([1.0, 1e-8]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
    def test_gram_plus_identity(self, a):
        assert is_positive_definite(a @ a.T + np.eye(3))


class TestLoewner:
    def test_scaled_identity(self):
        assert psd_order_leq(np.eye(2), 2 * np.eye(2))
        assert not psd_order_leq(2 * np.eye(2), np.eye(2))

    def test_diagonal_family_monotone(self):
        def gram(t):
            v = np.diag([(1 + t) ** 0.5, 1 + t])
            return v @ v.T

        assert np.allclose(gram(1.0), np.diag([2.0, 4.0]))
        assert np.allclose(gram(2.0), np.diag([3.0, 9.0]))
        assert psd_order_leq(gram(1.0), gram(2.0))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            psd_order_leq(np.eye(2), np.eye(3))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_reflexive_and_transitive(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((3, 3))
        a = g @ g.T
        h1 = rng.standard_normal((3, 3))
        h2 = rng.standard_normal((3, 3))
        b = a + h1 @ h1.T
        c = b + h2 @ h2.T
        assert psd_order_leq(a, a)
        assert psd_order_leq(a, b, 1e-9) and psd_order_leq(b, c, 1e-9)
        assert psd_order_leq(a, c, 1e-9)
