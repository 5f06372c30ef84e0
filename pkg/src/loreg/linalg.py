"""Dense symmetric / SPD linear-algebra kernels.

Everything here is dense and O(p^3); the problem sizes this package targets
(p of a few hundred) do not justify sparse storage.  Matrices are plain
``numpy.ndarray`` objects, index sets are sorted integer arrays.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric

PIVOT_FLOOR = 1e-12
SYMMETRY_RTOL = 1e-10


def as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-d array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def as_index_set(indices, p=None):
    """Return ``indices`` as a strictly increasing int array, checked against ``p``."""
    idx = np.unique(np.asarray(indices, dtype=np.intp).ravel())
    if idx.size and idx[0] < 0:
        raise IndexError("negative index in index set")
    if p is not None and idx.size and idx[-1] >= p:
        raise IndexError(f"index {idx[-1]} out of range for dimension {p}")
    return idx


def _check_square(M, name="matrix"):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    return M


def _check_symmetric(M, name="matrix"):
    M = _check_square(M, name)
    scale = np.max(np.abs(M))
    if scale > 0 and np.max(np.abs(M - M.T)) > SYMMETRY_RTOL * scale:
        raise NotSymmetric(f"{name} is not symmetric")
    return M


def cholesky(M):
    """Lower-triangular Cholesky factor ``L`` with ``L @ L.T == M``.

    Raises :class:`NotPositiveDefinite` when a squared pivot falls to
    ``1e-12 * max(diag(M))`` or below.  No jitter is ever added.
    """
    M = _check_symmetric(M)
    dmax = np.max(np.diag(M))
    if dmax <= 0:
        raise NotPositiveDefinite("non-positive diagonal")
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.min(np.diag(L)) ** 2 <= PIVOT_FLOOR * dmax:
        raise NotPositiveDefinite("pivot below floor")
    return L


def _cho_solve(L, B):
    Y = solve_triangular(L, B, lower=True, check_finite=False)
    return solve_triangular(L.T, Y, lower=False, check_finite=False)


def solve_spd(M, B):
    """Solve ``M X = B`` for SPD ``M``; ``B`` may be a vector or a matrix."""
    L = cholesky(M)
    B = np.asarray(B, dtype=float)
    if B.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"cannot solve {L.shape} system with rhs {B.shape}")
    return _cho_solve(L, B)


def spd_inverse(M):
    L = cholesky(M)
    inv = _cho_solve(L, np.eye(L.shape[0]))
    return 0.5 * (inv + inv.T)


def symmetric_eigen_extremes(M):
    """Return ``(lambda_min, lambda_max)`` of a symmetric matrix."""
    M = _check_symmetric(M)
    w = np.linalg.eigvalsh(M)
    return float(w[0]), float(w[-1])


def spectral_norm(M):
    M = as_matrix(M)
    return float(np.linalg.norm(M, 2))


def spd_inverse_sqrt(M):
    """Symmetric ``R`` with ``R @ R == inv(M)``."""
    M = _check_symmetric(M)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= PIVOT_FLOOR * max(np.max(np.diag(M)), 0.0) or w[0] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3g} is not positive")
    R = (V / np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def sample_covariance(X):
    """Uncentred second-moment matrix ``X.T @ X / n``."""
    X = as_matrix(X, "data")
    S = X.T @ X / X.shape[0]
    return 0.5 * (S + S.T)
