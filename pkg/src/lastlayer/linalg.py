"""Dense float64 linear algebra primitives with bit-stable semantics.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64;
``Matrix`` is an alias documenting intent.  The one non-standard contract
here is ``matmul``: it accumulates strictly in index order over the shared
dimension, so its output is bit-identical to a naive triple loop and
therefore reproducible run to run regardless of BLAS threading.  Seeded
experiments depend on that stability.

``solve_spd`` delegates the factorization to LAPACK (scipy's Cholesky),
which is deterministic for fixed inputs on a given build; everything else
is implemented here.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

Matrix = np.ndarray

_SYMMETRY_RTOL = 1e-10
_EIG_MAX_DIM = 200


class DimensionMismatchError(ValueError):
    """Operand shapes do not conform."""


class NotSymmetricError(ValueError):
    """A symmetric matrix was required but |a - a.T| exceeds tolerance."""


class NotPositiveDefiniteError(ValueError):
    """Cholesky hit a non-positive pivot; ``pivot_index`` is 0-based."""

    def __init__(self, pivot_index: int):
        self.pivot_index = pivot_index
        super().__init__(
            f"matrix is not positive definite: non-positive pivot at index {pivot_index}"
        )


def as_matrix(values) -> Matrix:
    """Coerce to a 2-D float64 array, validating dimensionality."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatchError(f"matrix dimensions must be >= 1, got {a.shape}")
    return a


def _check_2d(a: Matrix, name: str) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got ndim={a.ndim}")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with a fixed summation order.

    Each output entry is the sum of products taken in increasing order of
    the shared index, exactly as a scalar triple loop would compute it, so
    results are bit-reproducible and independent of BLAS.
    """
    a = _check_2d(a, "a")
    b = _check_2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatchError(
            f"matmul: inner dimensions differ, {a.shape[0]}x{a.shape[1]} times "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    buf = np.empty((m, n), dtype=np.float64)
    for i in range(k):
        np.multiply(a[:, i : i + 1], b[i : i + 1, :], out=buf)
        np.add(out, buf, out=out)
    return out


def sq_frobenius(a: Matrix) -> float:
    """Sum of squared entries (squared Frobenius norm)."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


def max_abs(a: Matrix) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.max(np.abs(a))) if a.size else 0.0


def check_symmetric(a: Matrix, name: str = "matrix") -> Matrix:
    """Require a square matrix symmetric within 1e-10 relative to its scale."""
    a = _check_2d(a, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got {a.shape}")
    scale = max(max_abs(a), 1.0)
    skew = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if skew > _SYMMETRY_RTOL * scale:
        raise NotSymmetricError(
            f"{name} is not symmetric: max|a - a.T| = {skew:.3e} exceeds "
            f"{_SYMMETRY_RTOL:.0e} * {scale:.3e}"
        )
    return a


def _failing_pivot_index(a: Matrix) -> int:
    """First 0-based column where a Cholesky pivot is non-positive.

    Left-looking factorization; only runs on the error path after LAPACK
    has already rejected the matrix.
    """
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        col = a[j:, j] - low[j:, :j] @ low[j, :j]
        pivot = col[0]
        if pivot <= 0.0 or not np.isfinite(pivot):
            return j
        root = np.sqrt(pivot)
        low[j:, j] = col / root
    return n - 1


def solve_spd(a: Matrix, b: Matrix) -> Matrix:
    """Solve a @ x = b for symmetric positive-definite a.

    Cholesky factorization followed by two triangular solves.  Raises
    NotSymmetricError or NotPositiveDefiniteError on bad input; the latter
    carries the failing pivot index.
    """
    a = check_symmetric(a, "a")
    b = _check_2d(b, "b")
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatchError(
            f"solve_spd: a is {a.shape[0]}x{a.shape[1]} but b has {b.shape[0]} rows"
        )
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise NotPositiveDefiniteError(_failing_pivot_index(a)) from None
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def min_eigenvalue_symmetric(a: Matrix, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of a symmetric matrix, accurate to ``tol``.

    Cyclic Jacobi rotations; sweeps run until the off-diagonal Frobenius
    norm drops below tol (which bounds the eigenvalue error) or machine
    precision is reached.  Guarded to n <= 200: this supports verification
    work, not large-scale spectra.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    a = check_symmetric(a, "a")
    n = a.shape[0]
    if n > _EIG_MAX_DIM:
        raise DimensionMismatchError(
            f"min_eigenvalue_symmetric supports n <= {_EIG_MAX_DIM}, got n = {n}"
        )
    if n == 1:
        return float(a[0, 0])

    work = 0.5 * (a + a.T)  # fold roundoff-level asymmetry before rotating
    scale = max(max_abs(work), 1.0)
    floor = max(tol, 1e-15 * scale)
    for _ in range(60):
        off = work.copy()
        np.fill_diagonal(off, 0.0)
        if np.sqrt(np.sum(off * off)) <= floor:
            break
        threshold = max_abs(off) * 1e-3
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if abs(apq) <= threshold:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = work[:, p].copy()
                col_q = work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p = work[p, :].copy()
                row_q = work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
    return float(np.min(np.diag(work)))
