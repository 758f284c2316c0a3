"""Dense linear algebra helpers for small covariance matrices.

Everything here operates on plain float64 numpy arrays. State dimensions in
this package are tiny (m <= 4), so no attention is paid to large-matrix
performance; the focus is on strict SPD error reporting and symmetric
round-off hygiene.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NotPositiveDefinite

# Relative tolerance used when checking that an input is symmetric.
SYMMETRY_RTOL = 1e-10


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T) / 2."""
    return 0.5 * (m + m.T)


def _check_symmetric(m: np.ndarray, name: str) -> None:
    scale = np.abs(m).max()
    if scale == 0.0:
        return
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite(f"{name} is not symmetric")


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m.

    Raises NotPositiveDefinite if m is asymmetric or has a non-positive
    pivot.
    """
    m = np.asarray(m, dtype=float)
    _check_symmetric(m, "matrix")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def cholesky_psd(m: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Cholesky factor of a positive *semi*-definite matrix.

    Pivots whose square falls below rel_tol times the largest diagonal
    entry are zeroed together with their column, so rank-deficient
    covariances (e.g. diag(1, 0)) factor cleanly. Negative pivots beyond
    the tolerance still raise NotPositiveDefinite.
    """
    m = np.asarray(m, dtype=float)
    _check_symmetric(m, "matrix")
    n = m.shape[0]
    scale = max(np.abs(np.diag(m)).max(), 1.0)
    lower = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = m[i, j] - lower[i, :j] @ lower[j, :j]
            if i == j:
                if acc < -rel_tol * scale:
                    raise NotPositiveDefinite(f"negative pivot {acc} at index {i}")
                lower[i, i] = math.sqrt(acc) if acc > rel_tol * scale else 0.0
            else:
                lower[i, j] = acc / lower[j, j] if lower[j, j] != 0.0 else 0.0
    return lower


def spd_solve(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve m @ x = b for SPD m via its Cholesky factor."""
    lower = cholesky(m)
    b = np.asarray(b, dtype=float)
    y = np.linalg.solve(lower, b)
    return np.linalg.solve(lower.T, y)


def log_det_spd(m: np.ndarray) -> float:
    """log(det(m)) for SPD m, computed as 2 * sum(log(diag(L)))."""
    lower = cholesky(m)
    diag = np.diag(lower)
    if np.any(diag <= 0.0):
        raise NotPositiveDefinite("zero pivot in log-determinant")
    return float(2.0 * np.sum(np.log(diag)))
