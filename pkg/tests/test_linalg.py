"""Linear algebra primitives against independent oracles.

The matmul oracle is a literal scalar triple loop and the comparison is
exact bit equality, which is the module's reproducibility contract.  The
eigenvalue oracle is inverse power iteration through an LU solve, a path
disjoint from the Jacobi implementation under test.
"""

import numpy as np
import pytest

from lastlayer.linalg import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    matmul,
    min_eigenvalue_symmetric,
    solve_spd,
    sq_frobenius,
)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal((3, 5))
        assert np.array_equal(matmul(np.eye(3), b), b)

    def test_permutation_swaps_columns(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(matmul(a, swap), np.array([[2.0, 1.0], [4.0, 3.0]]))

    def test_matches_triple_loop_bit_for_bit(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    def test_matches_triple_loop_on_views(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal((6, 3))
        assert np.array_equal(matmul(a.T, b), naive_matmul(a.T.copy(), b))

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionMismatchError, match="2x3.*4x2"):
            matmul(np.ones((2, 3)), np.ones((4, 2)))

    def test_associativity_within_tolerance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.standard_normal((4, 6))
            b = rng.standard_normal((6, 5))
            c = rng.standard_normal((5, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            scale = max(1.0, float(np.max(np.abs(left))))
            assert float(np.max(np.abs(left - right))) <= 1e-9 * scale


class TestSolveSpd:
    def test_identity_returns_rhs(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((4, 2))
        assert np.allclose(solve_spd(np.eye(4), b), b, rtol=0, atol=1e-14)

    def test_scalar_matrix(self):
        x = solve_spd(2.0 * np.eye(3), np.eye(3))
        assert np.allclose(x, 0.5 * np.eye(3), rtol=0, atol=1e-15)

    def test_residual_oracle(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((6, 6))
        a = m.T @ m + np.eye(6)
        b = rng.standard_normal((6, 3))
        x = solve_spd(a, b)
        residual = float(np.max(np.abs(a @ x - b)))
        assert residual <= 1e-8 * (1.0 + float(np.max(np.abs(b))))

    def test_residual_property_on_100_random_systems(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 51))
            m = rng.standard_normal((n, n))
            a = m.T @ m + np.eye(n)
            b = rng.standard_normal((n, int(rng.integers(1, 4))))
            x = solve_spd(a, b)
            residual = float(np.max(np.abs(a @ x - b)))
            assert residual <= 1e-8 * (1.0 + float(np.max(np.abs(b))))

    def test_rejects_non_symmetric(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(NotSymmetricError):
            solve_spd(a, np.eye(2))

    def test_non_positive_definite_reports_pivot(self):
        a = np.eye(4)
        a[2, 2] = -1.0
        with pytest.raises(NotPositiveDefiniteError) as err:
            solve_spd(a, np.eye(4))
        assert err.value.pivot_index == 2


class TestSqFrobenius:
    def test_zero_matrix(self):
        assert sq_frobenius(np.zeros((3, 4))) == 0.0

    def test_three_four_five(self):
        assert sq_frobenius(np.array([[3.0, 4.0]])) == 25.0

    def test_matches_entrywise_accumulation(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((5, 5))
        expected = 0.0
        for v in a.reshape(-1):
            expected += v * v
        assert abs(sq_frobenius(a) - expected) <= 1e-12 * max(1.0, expected)

    def test_positive_unless_zero(self):
        assert sq_frobenius(np.array([[0.0, 1e-100]])) > 0.0


def smallest_eig_by_inverse_power(a, iterations=2000):
    """Inverse power iteration on (a - shift I) with a shift below the
    spectrum; independent of the Jacobi path under test."""
    n = a.shape[0]
    shift = -float(np.max(np.sum(np.abs(a), axis=1))) - 1.0  # Gershgorin lower bound
    shifted = a - shift * np.eye(n)
    v = np.ones(n) / np.sqrt(n)
    value = 0.0
    for _ in range(iterations):
        v = np.linalg.solve(shifted, v)
        v = v / np.linalg.norm(v)
        value = float(v @ (a @ v))
    return value


class TestMinEigenvalue:
    def test_identity(self):
        assert min_eigenvalue_symmetric(np.eye(5), 1e-12) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert min_eigenvalue_symmetric(np.diag([3.0, -2.0, 7.0]), 1e-12) == pytest.approx(
            -2.0, abs=1e-12
        )

    def test_matches_inverse_power_iteration(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            m = rng.standard_normal((10, 10))
            a = 0.5 * (m + m.T)
            tol = 1e-9
            got = min_eigenvalue_symmetric(a, tol)
            expected = smallest_eig_by_inverse_power(a)
            assert abs(got - expected) <= 10 * tol

    def test_gram_matrices_are_psd(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            m = rng.standard_normal((int(rng.integers(1, 12)), int(rng.integers(1, 12))))
            assert min_eigenvalue_symmetric(m.T @ m, 1e-11) >= -1e-10

    def test_rejects_non_symmetric(self):
        with pytest.raises(NotSymmetricError):
            min_eigenvalue_symmetric(np.array([[0.0, 1.0], [0.0, 0.0]]), 1e-10)

    def test_size_guard(self):
        with pytest.raises(DimensionMismatchError):
            min_eigenvalue_symmetric(np.eye(201), 1e-10)
