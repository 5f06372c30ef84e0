"""Cyclic coordinate descent for the L1-penalised nodewise regression.

Objective (on a design with sqrt(n)-normalised columns)::

    ||y - Z a||^2 / n + 2 * lam * ||a||_1

whose coordinate minimiser is a soft-threshold of the partial correlation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import MaxSweepsExceeded, NonPositiveVariance
from .sdar import _check_design

DEFAULT_LAMBDAS = tuple(np.geomspace(0.02, 2.0, 20))


@dataclass(frozen=True)
class LassoConfig:
    lam: float
    tol: float = 1e-7
    max_sweeps: int = 10000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def lasso_objective(y, Z, alpha, lam):
    r = y - Z @ alpha
    return float(r @ r) / len(y) + 2.0 * lam * float(np.sum(np.abs(alpha)))


def _kkt_violation(g, a, lam):
    nz = a != 0
    v = np.zeros_like(a)
    v[nz] = np.abs(g[nz] - lam * np.sign(a[nz]))
    v[~nz] = np.maximum(np.abs(g[~nz]) - lam, 0.0)
    return float(np.max(v)) if v.size else 0.0


def lasso_gram(c, G, lam, tol=1e-7, max_sweeps=10000, init=None, callback=None):
    """Coordinate descent on ``c = Z'y/n``, ``G = Z'Z/n``.

    Sweeps cycle through coordinates ``0..p-1``.  After a full sweep with
    every change below ``tol`` the solver iterates on the nonzero set only,
    then re-verifies with another full sweep.  Stops once a full sweep moves
    nothing by more than ``tol`` and the subgradient conditions hold within
    ``tol``.

    Returns ``(alpha, sweeps, converged)``.  ``callback(alpha)`` is invoked
    after every sweep when given.
    """
    c = np.asarray(c, dtype=float)
    p = c.shape[0]
    a = np.zeros(p) if init is None else np.array(init, dtype=float)
    g = c - G @ a  # partial residual correlation Z'(y - Z a)/n
    diag = np.diag(G).copy()
    full = True
    sweeps = 0
    coords = np.arange(p)
    while sweeps < max_sweeps:
        sweeps += 1
        biggest = 0.0
        for k in coords:
            old = a[k]
            z = g[k] + diag[k] * old
            if z > lam:
                new = (z - lam) / diag[k]
            elif z < -lam:
                new = (z + lam) / diag[k]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                a[k] = new
                g -= delta * G[:, k]
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if callback is not None:
            callback(a)
        if biggest < tol:
            if full:
                g = c - G @ a
                if _kkt_violation(g, a, lam) <= tol:
                    return a, sweeps, True
            full = True
            coords = np.arange(p)
        else:
            # converge on the current support before the next full check
            full = False
            coords = np.flatnonzero(a)
            if coords.size == 0:
                full = True
                coords = np.arange(p)
    return a, sweeps, False


def lasso_cd(y, Z, cfg):
    """Lasso fit by cyclic coordinate descent.

    Parameters
    ----------
    y : array_like, shape (n,)
    Z : array_like, shape (n, p)
        sqrt(n)-normalised columns.
    cfg : LassoConfig

    Returns
    -------
    ndarray, shape (p,)
        The coefficient vector.  A :class:`MaxSweepsExceeded` warning is
        issued if ``cfg.max_sweeps`` is hit; the last iterate is returned.
    """
    y, Z = _check_design(y, Z)
    n = Z.shape[0]
    a, sweeps, ok = lasso_gram(Z.T @ y / n, Z.T @ Z / n, cfg.lam, cfg.tol, cfg.max_sweeps)
    if not ok:
        warnings.warn(f"lasso stopped after {sweeps} sweeps", MaxSweepsExceeded, stacklevel=2)
    return a


def lasso_sigma2(y, Z_raw, alpha, lam, penalty_coef=None):
    """Residual variance ``||y - Z_raw alpha||^2/n + lam * ||penalty_coef||_1``.

    ``penalty_coef`` defaults to ``alpha``.  The nodewise driver passes the
    coefficients of the standardised problem here, which makes the
    expression equal ``y'(y - Z beta)/n`` at a Lasso solution.
    """
    y = np.asarray(y, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    coef = alpha if penalty_coef is None else np.asarray(penalty_coef, dtype=float)
    r = y - np.asarray(Z_raw, dtype=float) @ alpha
    s2 = float(r @ r) / y.shape[0] + lam * float(np.sum(np.abs(coef)))
    if s2 <= 1e-12:
        raise NonPositiveVariance(f"degenerate residual variance {s2:.3g}")
    return s2
