"""Dense linear algebra helpers: thin SVD, pseudo-inverse, range projector, operator norm.

All routines take and return plain ``numpy`` arrays. LAPACK does the heavy
lifting; this module pins the numerical-rank convention used across the
package and turns LAPACK failures into a single exception type.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

#: Relative numerical-rank threshold: singular values below ``RANK_TOL * s_max`` are zero.
RANK_TOL = 1e-10


class SvdError(np.linalg.LinAlgError):
    """Raised when the SVD fails to converge."""


class SvdResult(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def _check_finite(A: np.ndarray) -> None:
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")


def svd(A, full: bool = False) -> SvdResult:
    """SVD ``A = U @ diag(S) @ V.T`` with ``S`` nonincreasing.

    Thin by default; ``full=True`` returns square ``U`` and ``V``. Falls back
    from the divide-and-conquer driver to the QR-iteration one before giving up.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {A.shape}")
    _check_finite(A)
    try:
        U, S, Vt = np.linalg.svd(A, full_matrices=full)
    except np.linalg.LinAlgError:
        import scipy.linalg

        try:
            U, S, Vt = scipy.linalg.svd(A, full_matrices=full, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            fro = float(np.linalg.norm(A))
            raise SvdError(
                f"SVD did not converge for {A.shape[0]}x{A.shape[1]} matrix "
                f"(frobenius norm {fro:.3e}, max |entry| {np.abs(A).max():.3e})"
            ) from exc
    return SvdResult(U, S, Vt.T)


def _sym_eig(A: np.ndarray, rank_tol: float):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    _check_finite(A)
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    evals, evecs = np.linalg.eigh(0.5 * (A + A.T))
    top = np.abs(evals).max() if evals.size else 0.0
    keep = np.abs(evals) > rank_tol * top
    return evals[keep], evecs[:, keep]


def pseudo_inverse(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``rank_tol * max|eigenvalue|`` are treated as zero.
    """
    evals, evecs = _sym_eig(A, rank_tol)
    return (evecs / evals) @ evecs.T


def range_basis(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (as columns) of the range of a symmetric PSD matrix."""
    return _sym_eig(A, rank_tol)[1]


def range_projector(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthogonal projector onto ``Im A`` for symmetric PSD ``A``."""
    B = range_basis(A, rank_tol)
    return B @ B.T


def numerical_rank(A, rank_tol: float = RANK_TOL) -> int:
    S = svd(A).S
    if S.size == 0 or S[0] == 0.0:
        return 0
    return int(np.sum(S > rank_tol * S[0]))


def operator_norm(A) -> float:
    """Spectral norm (largest singular value)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(svd(A).S[0])
