"""Dense linear algebra helpers shared by the estimators and learners."""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericError

DEFAULT_RCOND = 1e-10


def pinv(A: np.ndarray, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via the SVD.

    Singular values at or below ``rcond * sigma_max`` are treated as zero.

    Raises:
        DomainError: on non-finite input or ``rcond`` outside (0, 1).
        NumericError: if the SVD does not converge.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DomainError(f"pinv expects a matrix, got ndim={A.ndim}")
    if not 0.0 < rcond < 1.0:
        raise DomainError(f"rcond must lie in (0, 1), got {rcond}")
    if not np.all(np.isfinite(A)):
        raise DomainError("pinv input has non-finite entries")
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge on a {A.shape} matrix") from exc
    smax = s[0] if s.size else 0.0
    keep = s > rcond * smax
    if not np.any(keep):
        return np.zeros(A.shape[::-1])
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


def pinv_psd(A: np.ndarray, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix, symmetrized on output."""
    P = pinv(A, rcond)
    return 0.5 * (P + P.T)


def frob_sq(W: np.ndarray) -> float:
    return float(np.vdot(W, W))


def frob(W: np.ndarray) -> float:
    return float(np.sqrt(frob_sq(W)))


def project_frobenius_ball(W: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{X : ||X||_F <= radius}``."""
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    nrm = frob(W)
    if nrm <= radius:
        return W
    return W * (radius / nrm)


def penrose_residuals(A: np.ndarray, P: np.ndarray) -> tuple[float, float, float, float]:
    """Max-abs residuals of the four Penrose conditions for ``P = A^+``."""
    AP = A @ P
    PA = P @ A
    return (
        float(np.max(np.abs(AP @ A - A))),
        float(np.max(np.abs(PA @ P - P))),
        float(np.max(np.abs(AP - AP.T))),
        float(np.max(np.abs(PA - PA.T))),
    )
