"""Support detection and root finding (SDAR) for L0-constrained least squares.

Solves ``min ||y - Z b||^2 / n  s.t.  ||b||_0 <= T`` approximately by an
active-set fixed-point iteration on the KKT system

    b_A = (Z_A' Z_A)^{-1} Z_A' y,   b_{A^c} = 0,
    d_{A^c} = Z_{A^c}' (y - Z_A b_A) / n,   d_A = 0,
    A = indices of the T largest |b + d|.

The iteration only ever touches ``Z`` through the Gram matrix ``Z'Z/n`` and
the correlation vector ``Z'y/n``, so the core works on those directly; this
is what the nodewise driver uses to avoid an O(np) pass per iteration.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotNormalized, NotPositiveDefinite, SingularActiveGram
from .linalg import as_matrix, solve_spd

NORM_RTOL = 1e-6


@dataclass(frozen=True)
class SdarConfig:
    t: int
    max_iter: int = 50

    def __post_init__(self):
        if int(self.t) < 1:
            raise ValueError("SDAR needs an active-set size t >= 1")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SdarResult:
    """Outcome of one SDAR run.

    ``iterations`` counts root-finding passes, so an immediately stationary
    start reports 1.
    """

    beta: np.ndarray
    active: np.ndarray
    dual: np.ndarray
    iterations: int
    converged: bool


def top_t(v, t):
    """Indices of the ``t`` largest entries of ``v``, lower index winning ties, sorted."""
    order = np.argsort(-np.asarray(v), kind="stable")
    return np.sort(order[:t])


def _restricted_ols(G, c, A):
    if A.size == 0:
        return np.empty(0)
    try:
        return solve_spd(G[np.ix_(A, A)], c[A])
    except NotPositiveDefinite:
        raise SingularActiveGram(f"Gram matrix singular on active set {A.tolist()}") from None


def sdar_gram(c, G, t, max_iter=50, yy=None):
    """SDAR on sufficient statistics ``c = Z'y/n`` and ``G = Z'Z/n``.

    ``yy = y'y/n`` is only used to rank iterates by residual sum of squares
    when the cycle guard fires; without it the ranking uses ``-c_A' b_A``,
    which differs from RSS/n by a constant.
    """
    c = np.asarray(c, dtype=float)
    p = c.shape[0]
    if not 1 <= t <= p:
        raise ValueError(f"t={t} outside 1..{p}")
    yy = 0.0 if yy is None else float(yy)

    beta = np.zeros(p)
    d = c.copy()
    A = top_t(np.abs(beta + d), t)
    history = []
    seen = {}
    for k in range(max_iter):
        bA = _restricted_ols(G, c, A)
        beta = np.zeros(p)
        beta[A] = bA
        d = c - G[:, A] @ bA
        d[A] = 0.0
        A_next = top_t(np.abs(beta + d), t)
        if np.array_equal(A_next, A):
            return SdarResult(beta, A, d, k + 1, True)
        rss = yy - float(c[A] @ bA)
        history.append((rss, beta, A, d))
        seen[A.tobytes()] = k
        if A_next.tobytes() in seen:
            # returned to an earlier support: the iteration is cycling
            rss, beta, A, d = min(history, key=lambda h: h[0])
            return SdarResult(beta, A, d, k + 1, False)
        A = A_next
    _, beta, A, d = history[-1]
    return SdarResult(beta, A, d, max_iter, False)


def _check_design(y, Z):
    Z = as_matrix(Z, "design")
    y = np.asarray(y, dtype=float).ravel()
    n = Z.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatch(f"response length {y.shape[0]} != design rows {n}")
    norms = np.sqrt(np.sum(Z * Z, axis=0))
    if np.any(np.abs(norms - np.sqrt(n)) > NORM_RTOL * np.sqrt(n)):
        bad = int(np.argmax(np.abs(norms - np.sqrt(n))))
        raise NotNormalized(f"column {bad} has norm {norms[bad]:.6g}, expected sqrt(n)={np.sqrt(n):.6g}")
    return y, Z


def sdar_fit(y, Z, cfg):
    """Run SDAR on response ``y`` and a design with sqrt(n)-normalised columns.

    Parameters
    ----------
    y : array_like, shape (n,)
    Z : array_like, shape (n, p)
        Every column must have Euclidean norm sqrt(n) (relative tol 1e-6).
    cfg : SdarConfig

    Returns
    -------
    SdarResult
        ``beta`` is zero off ``active`` and ``|active| == cfg.t``.  If the
        active set revisits an earlier support the iterate with the smallest
        residual sum of squares is returned with ``converged=False``.
    """
    y, Z = _check_design(y, Z)
    if cfg.t > Z.shape[1]:
        raise ValueError(f"t={cfg.t} exceeds number of predictors {Z.shape[1]}")
    n = Z.shape[0]
    G = Z.T @ Z / n
    c = Z.T @ y / n
    return sdar_gram(c, G, cfg.t, cfg.max_iter, yy=y @ y / n)


def kkt_residual(r, y, Z):
    """Largest violation of the L0 KKT fixed point by ``r``.

    Returns the max of the coefficient error against the exact OLS on the
    active set, the dual error on the inactive set, and ``inf`` if the
    active set is not the top-|beta + d| set under the tie rule.
    """
    y = np.asarray(y, dtype=float).ravel()
    Z = as_matrix(Z, "design")
    n, p = Z.shape
    A = np.asarray(r.active, dtype=np.intp)
    inactive = np.setdiff1d(np.arange(p), A)
    beta = np.asarray(r.beta, dtype=float)
    d = np.asarray(r.dual, dtype=float)

    ZA = Z[:, A]
    ols = _restricted_ols(Z.T @ Z / n, Z.T @ y / n, A)
    v1 = float(np.max(np.abs(beta[A] - ols))) if A.size else 0.0
    resid = y - ZA @ beta[A]
    v2 = float(np.max(np.abs(d[inactive] - Z[:, inactive].T @ resid / n))) if inactive.size else 0.0
    v3 = 0.0 if np.array_equal(top_t(np.abs(beta + d), A.size), A) else np.inf
    return max(v1, v2, v3)
