"""Nodewise precision-matrix estimation: L0 (SDAR) and Lasso variants.

For each column ``j`` the raw column ``X_j`` is regressed on the
standardised remaining columns ``Z_{-j}`` (``Z = X diag(Sigma_hat)^{-1/2}``).
The fitted coefficients are mapped back to the raw scale, giving

    alpha_j = beta_j / sqrt(Sigma_hat_ii),
    sigma2_j = ||X_j - X_{-j} alpha_j||^2 / n,
    Omega_jj = 1 / sigma2_j,   Omega_{-j, j} = -Omega_jj * alpha_j.

The support size (L0) or penalty (Lasso) is picked per column by HBIC.
The assembled matrix is symmetrised by keeping the smaller-magnitude entry
of each mirrored pair.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllCandidatesFailed,
    DegenerateColumn,
    DimensionMismatch,
    LoregError,
    MaxSweepsExceeded,
    NonPositiveVariance,
    SingularActiveGram,
)
from .lassocd import DEFAULT_LAMBDAS, lasso_gram, lasso_sigma2
from .linalg import as_index_set, as_matrix, solve_spd
from .sdar import _restricted_ols, sdar_gram

VARIANCE_FLOOR = 1e-10
COLUMN_FLOOR = 1e-12
LOSS_FLOOR = 1e-300
METHODS = ("loreg", "lasso")


def auto_t_max(n, p):
    """``floor(n / (log p * log log n))`` clipped to ``[0, p - 1]``."""
    t = math.floor(n / (math.log(p) * math.log(math.log(n))))
    return max(0, min(t, p - 1))


@dataclass
class TuningSpec:
    """Tuning options for :func:`estimate`.

    ``t_max`` is an int or ``"auto"``; ``fixed_t`` bypasses HBIC for the L0
    fit.  ``lambdas`` is the Lasso grid.
    """

    t_max: int | str = 20
    fixed_t: int | None = None
    max_iter: int = 50
    lambdas: tuple = DEFAULT_LAMBDAS
    lasso_tol: float = 1e-7
    lasso_max_sweeps: int = 10000

    def __post_init__(self):
        if self.t_max != "auto" and (isinstance(self.t_max, str) or self.t_max < 0):
            raise ValueError("t_max must be a nonnegative integer or 'auto'")
        if self.fixed_t is not None and self.fixed_t < 0:
            raise ValueError("fixed_t must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.lambdas or min(self.lambdas) <= 0:
            raise ValueError("lambdas must be a nonempty set of positive values")
        if self.lasso_tol <= 0 or self.lasso_max_sweeps < 1:
            raise ValueError("lasso_tol and lasso_max_sweeps must be positive")

    def resolve_t_max(self, n, p):
        if self.t_max == "auto":
            return auto_t_max(n, p)
        t = int(self.t_max)
        if t < 0:
            raise ValueError("t_max must be nonnegative")
        return min(t, p - 1)


@dataclass
class ColumnEstimate:
    j: int
    beta: np.ndarray
    alpha: np.ndarray
    active: np.ndarray
    sigma2: float
    omega_jj: float
    omega_col: np.ndarray
    chosen_t: float
    hbic_value: float
    trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True

    @property
    def active_plus(self):
        return np.sort(np.append(self.active, self.j))


@dataclass
class PrecisionEstimate:
    omega_us: np.ndarray
    omega_s: np.ndarray
    columns: list
    method: str
    gamma_diag: np.ndarray
    sigma_hat: np.ndarray
    n: int
    diagnostics: list = field(default_factory=list)

    def active_plus(self, j):
        return self.columns[j].active_plus


def standardize(X):
    """Scale columns to Euclidean norm sqrt(n).

    Returns ``(Z, gamma_diag, sigma_hat)`` where ``sigma_hat = X'X/n`` and
    ``gamma_diag`` is its diagonal.
    """
    X = as_matrix(X, "data")
    n = X.shape[0]
    sigma_hat = X.T @ X / n
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    gamma = np.diag(sigma_hat).copy()
    bad = np.flatnonzero(gamma <= COLUMN_FLOOR)
    if bad.size:
        raise DegenerateColumn(int(bad[0]), float(gamma[bad[0]]))
    Z = X / np.sqrt(gamma)
    return Z, gamma, sigma_hat


def symmetrize(M):
    """Minimum-magnitude symmetrisation.

    Entry ``(i, j)`` keeps whichever of ``M_ij``, ``M_ji`` is smaller in
    absolute value; exact magnitude ties take the upper-triangular value so
    the result is always exactly symmetric.
    """
    M = np.asarray(M, dtype=float)
    a, b = np.abs(M), np.abs(M.T)
    upper = np.triu(M) + np.triu(M, 1).T
    return np.where(a < b, M, np.where(a > b, M.T, upper))


def hbic_from_loss(loss, size, n, p):
    return n * math.log(max(loss, LOSS_FLOOR)) + size * math.log(p - 1) * math.log(math.log(n))


class _Problem:
    """Per-dataset sufficient statistics shared by all column fits."""

    def __init__(self, X, Z=None, gamma=None, sigma_hat=None):
        self.X = as_matrix(X, "data")
        self.n, self.p = self.X.shape
        if self.n < 3:
            raise ValueError("need n >= 3 (HBIC uses log(log n))")
        if self.p < 2:
            raise ValueError("need p >= 2")
        if Z is None or gamma is None or sigma_hat is None:
            Z, gamma, sigma_hat = standardize(self.X)
        self.Z = as_matrix(Z, "standardised design")
        if self.Z.shape != self.X.shape:
            raise DimensionMismatch("standardised design and data differ in shape")
        self.gamma = np.asarray(gamma, dtype=float)
        self.sigma_hat = sigma_hat
        self.gram = self.Z.T @ self.Z / self.n
        self.cross = self.Z.T @ self.X / self.n

    def column(self, j):
        rest = np.delete(np.arange(self.p), j)
        return rest, self.cross[rest, j], self.gram[np.ix_(rest, rest)]

    def loss(self, j, cols, coef):
        r = self.X[:, j] - self.Z[:, cols] @ coef
        return float(r @ r) / self.n

    def hbic(self, j, cols, coef):
        return hbic_from_loss(self.loss(j, cols, coef), len(cols), self.n, self.p)

    def ols_hbic(self, j, cols):
        cols = np.asarray(cols, dtype=np.intp)
        coef = _restricted_ols(self.gram, self.cross[:, j], cols)
        return self.hbic(j, cols, coef)


def _problem(X, Z):
    X = as_matrix(X, "data")
    if Z is None:
        return _Problem(X)
    n = X.shape[0]
    gamma = np.sum(X * X, axis=0) / n
    return _Problem(X, Z, gamma, X.T @ X / n)


def hbic(active, j, X, Z):
    """HBIC of support ``active`` (full-matrix indices, excluding ``j``) for column ``j``.

    The loss is the exact least-squares residual of ``X_j`` on ``Z_active``.
    """
    prob = _problem(X, Z)
    active = as_index_set(active, prob.p)
    if j in active:
        raise ValueError(f"active set must exclude the response column {j}")
    return prob.ols_hbic(j, active)


def _sweep_t(prob, j, t_max, max_iter):
    """SDAR fits for T = 0..t_max; returns per-T results, trace and skipped T."""
    rest, c, G = prob.column(j)
    yy = float(prob.X[:, j] @ prob.X[:, j]) / prob.n
    fits = {0: None}
    trace = [(0, hbic_from_loss(yy, 0, prob.n, prob.p))]
    skipped = []
    for t in range(1, t_max + 1):
        try:
            res = sdar_gram(c, G, t, max_iter, yy=yy)
        except SingularActiveGram:
            skipped.append(t)
            continue
        cols = rest[res.active]
        fits[t] = res
        trace.append((t, prob.hbic(j, cols, res.beta[res.active])))
    return rest, fits, trace, skipped


def _argmin_trace(trace):
    if not trace:
        raise AllCandidatesFailed("no candidate could be fitted")
    best_t, best_v = trace[0]
    for t, v in trace[1:]:
        if v < best_v:
            best_t, best_v = t, v
    return best_t, best_v


def select_t(j, X, Z, t_max, max_iter=50):
    """HBIC-optimal active-set size for column ``j``.

    Returns ``(t_star, trace)`` with ``trace`` a list of ``(T, hbic)`` over
    the candidates that could be fitted; ties go to the smaller ``T``.
    """
    prob = _problem(X, Z)
    if not 0 <= t_max <= prob.p - 1:
        raise ValueError(f"t_max must lie in 0..{prob.p - 1}")
    _, _, trace, _ = _sweep_t(prob, j, t_max, max_iter)
    return _argmin_trace(trace)[0], trace


def _finish_column(prob, j, rest, beta, active, chosen, hbic_value, trace, flags, iterations=0,
                   converged=True, sigma2=None):
    alpha = beta / np.sqrt(prob.gamma[rest])
    if sigma2 is None:
        r = prob.X[:, j] - prob.X[:, rest] @ alpha
        sigma2 = float(r @ r) / prob.n
    floor = VARIANCE_FLOOR * prob.sigma_hat[j, j]
    if sigma2 <= floor:
        flags.append("degenerate_variance")
        sigma2 = floor
    omega_jj = 1.0 / sigma2
    return ColumnEstimate(
        j=j,
        beta=beta,
        alpha=alpha,
        active=rest[active],
        sigma2=sigma2,
        omega_jj=omega_jj,
        omega_col=-omega_jj * alpha,
        chosen_t=chosen,
        hbic_value=hbic_value,
        trace=trace,
        flags=flags,
        iterations=iterations,
        converged=converged,
    )


def _loreg_column(prob, j, t, max_iter, trace=None, fit=None):
    rest, c, G = prob.column(j)
    flags = []
    if t == 0:
        beta = np.zeros(prob.p - 1)
        active = np.empty(0, dtype=np.intp)
        iterations, converged = 0, True
    else:
        if fit is None:
            yy = float(prob.X[:, j] @ prob.X[:, j]) / prob.n
            fit = sdar_gram(c, G, t, max_iter, yy=yy)
        beta, active = fit.beta, fit.active
        iterations, converged = fit.iterations, fit.converged
        if not converged:
            flags.append("sdar_not_converged")
    hb = prob.hbic(j, rest[active], beta[active])
    return _finish_column(prob, j, rest, beta, active, t, hb, trace or [(t, hb)], flags,
                          iterations, converged)


def fit_column_loreg(j, X, Z, gamma_diag, t, max_iter=50):
    """Nodewise L0 fit of column ``j`` with active-set size ``t`` (``t = 0`` gives the empty model)."""
    X = as_matrix(X, "data")
    n = X.shape[0]
    prob = _Problem(X, Z, gamma_diag, X.T @ X / n)
    if not 0 <= t <= prob.p - 1:
        raise ValueError(f"t must lie in 0..{prob.p - 1}")
    return _loreg_column(prob, j, t, max_iter)


def _select_and_fit_loreg(prob, j, tuning):
    if tuning.fixed_t is not None:
        return _loreg_column(prob, j, min(int(tuning.fixed_t), prob.p - 1), tuning.max_iter)
    t_max = tuning.resolve_t_max(prob.n, prob.p)
    rest, fits, trace, skipped = _sweep_t(prob, j, t_max, tuning.max_iter)
    t_star, _ = _argmin_trace(trace)
    col = _loreg_column(prob, j, t_star, tuning.max_iter, trace=trace, fit=fits[t_star])
    if skipped:
        col.flags.append(f"singular_gram_skipped_t={skipped}")
    return col


def _lasso_column(prob, j, tuning):
    rest, c, G = prob.column(j)
    flags = []
    trace = []
    best = None
    a = None
    for lam in sorted(tuning.lambdas, reverse=True):
        a, sweeps, ok = lasso_gram(c, G, lam, tuning.lasso_tol, tuning.lasso_max_sweeps, init=a)
        if not ok:
            flags.append(f"max_sweeps_lambda={lam:.6g}")
        supp = np.flatnonzero(a)
        if supp.size >= prob.n:
            continue
        try:
            hb = prob.ols_hbic(j, rest[supp])
        except SingularActiveGram:
            continue
        trace.append((float(lam), hb))
        if best is None or hb < best[1]:
            best = (lam, hb, a.copy())
    if best is None:
        raise AllCandidatesFailed(f"column {j}: no lambda gave a fittable support")
    lam, hb, beta = best
    alpha = beta / np.sqrt(prob.gamma[rest])
    try:
        s2 = lasso_sigma2(prob.X[:, j], prob.X[:, rest], alpha, lam, penalty_coef=beta)
    except NonPositiveVariance:
        s2 = 0.0
    return _finish_column(prob, j, rest, beta, np.flatnonzero(beta), float(lam), hb, trace, flags,
                          sigma2=s2)


def _fallback_column(prob, j, exc):
    col = _loreg_column(prob, j, 0, 1)
    col.flags.append(f"fallback_t0: {type(exc).__name__}: {exc}")
    return col


def estimate(X, method="loreg", tuning=None, n_jobs=1):
    """Estimate a sparse precision matrix column by column.

    Parameters
    ----------
    X : array_like, shape (n, p)
        Centred data, rows are observations.  Requires ``n >= 3, p >= 2``.
    method : {"loreg", "lasso"}
    tuning : TuningSpec, optional
    n_jobs : int
        Width of the thread pool used over columns.  The result does not
        depend on it.

    Returns
    -------
    PrecisionEstimate
        A failing column falls back to the empty model; the reason is kept
        in ``diagnostics`` as ``(column, message)``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    tuning = tuning or TuningSpec()
    prob = _Problem(X)
    fit = _select_and_fit_loreg if method == "loreg" else _lasso_column

    def one(j):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MaxSweepsExceeded)
                return fit(prob, j, tuning)
        except LoregError as exc:
            return _fallback_column(prob, j, exc)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            columns = list(pool.map(one, range(prob.p)))
    else:
        columns = [one(j) for j in range(prob.p)]

    omega_us = np.zeros((prob.p, prob.p))
    diagnostics = []
    for col in columns:
        rest = np.delete(np.arange(prob.p), col.j)
        omega_us[col.j, col.j] = col.omega_jj
        omega_us[rest, col.j] = col.omega_col
        diagnostics.extend((col.j, f) for f in col.flags)
    return PrecisionEstimate(
        omega_us=omega_us,
        omega_s=symmetrize(omega_us),
        columns=columns,
        method=method,
        gamma_diag=prob.gamma,
        sigma_hat=prob.sigma_hat,
        n=prob.n,
        diagnostics=diagnostics,
    )


def population_nodewise(sigma):
    """Rebuild ``Omega = inv(sigma)`` column by column from population regressions.

    For column ``j``: ``alpha_j = inv(S[-j,-j]) S[-j,j]``,
    ``Omega_jj = 1 / (S_jj - S[j,-j] alpha_j)`` and
    ``Omega[-j,j] = -Omega_jj alpha_j``.
    """
    sigma = as_matrix(sigma, "sigma")
    p = sigma.shape[0]
    omega = np.zeros((p, p))
    for j in range(p):
        rest = np.delete(np.arange(p), j)
        alpha = solve_spd(sigma[np.ix_(rest, rest)], sigma[rest, j])
        omega[j, j] = 1.0 / (sigma[j, j] - sigma[j, rest] @ alpha)
        omega[rest, j] = -omega[j, j] * alpha
    return omega
