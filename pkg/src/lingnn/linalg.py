"""Dense linear-algebra kernel.

All routines take float64 numpy arrays and are pure. Rank decisions use the
cutoff ``max(rows, cols) * eps * sigma_max``.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

EPS = np.finfo(np.float64).eps


def as_matrix(M, name="matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DimensionError(f"{name} has non-finite entries")
    return A


def _nonempty(M, name):
    A = as_matrix(M, name)
    if A.size == 0:
        raise DimensionError(f"{name} is empty (shape {A.shape})")
    return A


def rank_tolerance(s: np.ndarray, shape) -> float:
    if s.size == 0:
        return 0.0
    return max(shape) * EPS * float(s[0])


def singular_values(M) -> np.ndarray:
    """Singular values in descending order."""
    A = _nonempty(M, "M")
    return np.linalg.svd(A, compute_uv=False)


def smallest_singular_value(M) -> float:
    """The min(rows, cols)-th largest singular value of ``M``."""
    return float(singular_values(M)[-1])


def smallest_gram_eigenvalue(B) -> float:
    """lambda_min(B^T B).

    For ``rows >= cols`` this is sigma_min(B)^2. A wide matrix has a
    nontrivial kernel, so its cols x cols Gram matrix is singular and the
    result is exactly 0.
    """
    A = _nonempty(B, "B")
    rows, cols = A.shape
    if rows < cols:
        return 0.0
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[-1]) ** 2


def row_space_basis(A) -> np.ndarray:
    """Orthonormal basis (as columns) of the row space of ``A``."""
    A = as_matrix(A, "A")
    if A.size == 0:
        return np.zeros((A.shape[1], 0))
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rank_tolerance(s, A.shape)))
    return Vt[:r].T


def least_squares_residual(A, Y) -> tuple[float, np.ndarray]:
    """Minimise ``||Z A - Y||_F^2`` over Z.

    Parameters
    ----------
    A : (p, n_bar) array
    Y : (m_y, n_bar) array

    Returns
    -------
    residual : float
        The minimum value.
    Z : (m_y, p) array
        Minimum-Frobenius-norm minimiser.
    """
    A = as_matrix(A, "A")
    Y = as_matrix(Y, "Y")
    if A.shape[1] != Y.shape[1]:
        raise DimensionError(
            f"column mismatch: A has {A.shape[1]} columns, Y has {Y.shape[1]}"
        )
    p = A.shape[0]
    if A.size == 0:
        return float(np.sum(Y * Y)), np.zeros((Y.shape[0], p))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rank_tolerance(s, A.shape)))
    U, s, Vt = U[:, :r], s[:r], Vt[:r]
    # pseudo-inverse of A is V diag(1/s) U^T
    YV = Y @ Vt.T
    Z = (YV / s) @ U.T
    R = Y - YV @ Vt
    return float(np.sum(R * R)), Z


def frob_sq(M) -> float:
    M = np.asarray(M)
    return float(np.sum(M * M))
