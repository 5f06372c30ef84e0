"""Entrywise inference for nodewise precision estimates.

Two families of asymptotic variances are supported:

* undesparsified, for ``Omega_us[i, j]`` with ``i`` in the augmented active
  set ``A_j+ = A_j U {j}``; both estimators only use the inverse of the
  sample covariance restricted to ``A_j+``;
* desparsified, for ``T = Omega + Omega' - Omega' Sigma_hat Omega``.

Each comes in a Gaussian closed form and a moment-based general form.
Z-scores test ``H0: Omega_ij = 0`` and multiple testing is done with
Benjamini-Hochberg.
"""

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateVariance, DimensionMismatch, IndexNotInActiveSet, InvalidPValue, NotPositiveDefinite
from .linalg import as_index_set, as_matrix, spd_inverse, spd_inverse_sqrt

VARIANCE_FLOOR = 1e-10
UNIFORM_KURTOSIS = 9.0 / 5.0


class VarianceKind(str, enum.Enum):
    UNDESPARSIFIED_GAUSSIAN = "undesparsified_gaussian"
    UNDESPARSIFIED_GENERAL = "undesparsified_general"
    DESPARSIFIED_GAUSSIAN = "desparsified_gaussian"
    DESPARSIFIED_GENERAL = "desparsified_general"

    @property
    def desparsified(self):
        return self.name.startswith("DESPARSIFIED")

    @property
    def gaussian(self):
        return self.name.endswith("GAUSSIAN")

    @classmethod
    def for_point(cls, point, gaussian=True):
        """Variance kind matched to the estimator a point estimate comes from."""
        point = Point(point)
        if point is Point.THAT:
            return cls.DESPARSIFIED_GAUSSIAN if gaussian else cls.DESPARSIFIED_GENERAL
        return cls.UNDESPARSIFIED_GAUSSIAN if gaussian else cls.UNDESPARSIFIED_GENERAL


class Point(str, enum.Enum):
    OMEGA_US = "US"
    OMEGA_S = "S"
    THAT = "T"


def normal_cdf(x):
    return ndtr(x)


def normal_quantile(q):
    return ndtri(q)


def two_sided_pvalue(z):
    return 2.0 * ndtr(-np.abs(z))


@dataclass
class InferenceResult:
    point: np.ndarray
    var_matrix: np.ndarray
    z_scores: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    variance_kind: VarianceKind
    point_kind: Point
    n: int
    alpha_level: float
    t_hat: np.ndarray | None = None
    floored: int = 0
    undefined: int = 0
    flags: list = field(default_factory=list)

    @property
    def defined(self):
        return np.isfinite(self.var_matrix)


@dataclass(frozen=True)
class ThresholdSpec:
    """Which matrices feed the thresholding operator.

    ``value_source`` supplies retained values, ``z_source`` the null
    Z-scores and ``support_source`` the tested lower-triangular support.
    Each is one of ``"US"``, ``"S"``, ``"T"``.
    """

    value_source: str
    z_source: str
    support_source: str
    fdr_level: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.fdr_level < 1.0:
            raise ValueError("fdr_level must lie in (0, 1)")
        for name in (self.value_source, self.z_source, self.support_source):
            Point(name)


def desparsify(omega, sigma_hat):
    """``Omega + Omega' - Omega' Sigma_hat Omega``."""
    omega = as_matrix(omega, "omega")
    sigma_hat = as_matrix(sigma_hat, "sigma_hat")
    if omega.shape != sigma_hat.shape or omega.shape[0] != omega.shape[1]:
        raise DimensionMismatch(f"shapes {omega.shape} and {sigma_hat.shape} are not conformable")
    return omega + omega.T - omega.T @ sigma_hat @ omega


def _position(a_plus, i, j):
    a_plus = np.asarray(a_plus)
    pos = np.searchsorted(a_plus, [i, j])
    for idx, k in zip(pos, (i, j)):
        if idx >= a_plus.size or a_plus[idx] != k:
            raise IndexNotInActiveSet(f"index {k} is not in the augmented active set {a_plus.tolist()}")
    return int(pos[0]), int(pos[1])


def _sub_inverse(sigma_hat, a_plus):
    return spd_inverse(sigma_hat[np.ix_(a_plus, a_plus)])


def var_undesp_gaussian(sigma_hat, a_plus, i, j):
    """Gaussian closed-form variance of ``Omega_us[i, j]``.

    With ``S = inv(Sigma_hat[A+, A+])`` and ``i^, j^`` the positions of
    ``i, j`` within the sorted set, returns ``S[i^,i^] S[j^,j^] + S[i^,j^]^2``.
    """
    sigma_hat = as_matrix(sigma_hat, "sigma_hat")
    a_plus = as_index_set(a_plus, sigma_hat.shape[0])
    ii, jj = _position(a_plus, i, j)
    S = _sub_inverse(sigma_hat, a_plus)
    return float(S[ii, ii] * S[jj, jj] + S[ii, jj] ** 2)


def _general_moment(U, ii, jj):
    prod = U[:, ii] * U[:, jj]
    return float(np.mean(prod * prod))


def var_undesp_general(X, sigma_hat, a_plus, i, j, omega):
    """Moment-based variance of ``Omega_us[i, j]``.

    ``mean_k [S_i. x_k x_k' S_.j]^2 - (Omega_ij^2 + Omega_ji^2) / 2`` over
    rows ``x_k`` of ``X`` restricted to ``A+``.  Values at or below ``1e-10``
    are floored there with a :class:`DegenerateVariance` warning.
    """
    X = as_matrix(X, "data")
    sigma_hat = as_matrix(sigma_hat, "sigma_hat")
    omega = as_matrix(omega, "omega")
    a_plus = as_index_set(a_plus, sigma_hat.shape[0])
    ii, jj = _position(a_plus, i, j)
    U = X[:, a_plus] @ _sub_inverse(sigma_hat, a_plus)
    v = _general_moment(U, ii, jj) - 0.5 * (omega[i, j] ** 2 + omega[j, i] ** 2)
    return _floor(v)


def var_desp_gaussian(omega, i, j):
    omega = np.asarray(omega, dtype=float)
    return float(omega[i, i] * omega[j, j] + 0.5 * (omega[i, j] ** 2 + omega[j, i] ** 2))


def var_desp_general(X, omega, i, j):
    """Moment-based variance of ``T[i, j]``, floored like :func:`var_undesp_general`."""
    X = as_matrix(X, "data")
    omega = as_matrix(omega, "omega")
    V = X @ omega[:, [i, j]]
    v = _general_moment(V, 0, 1) - 0.5 * (omega[i, j] ** 2 + omega[j, i] ** 2)
    return _floor(v)


def _floor(v):
    if v <= VARIANCE_FLOOR:
        warnings.warn(f"variance estimate {v:.3g} floored at {VARIANCE_FLOOR}", DegenerateVariance, stacklevel=3)
        return VARIANCE_FLOOR
    return float(v)


def undesparsified_variances(estimate, X=None, gaussian=True):
    """Variance matrix for ``Omega_us``: entry ``(i, j)`` is set when ``i`` is in ``A_j+``.

    Returns ``(var, floored_count)``; undefined entries are NaN.
    """
    sigma_hat = estimate.sigma_hat
    omega = estimate.omega_us
    p = omega.shape[0]
    var = np.full((p, p), np.nan)
    floored = 0
    if not gaussian:
        X = as_matrix(X, "data")
    for col in estimate.columns:
        j = col.j
        a_plus = col.active_plus
        try:
            S = _sub_inverse(sigma_hat, a_plus)
        except NotPositiveDefinite:
            continue
        jj = int(np.searchsorted(a_plus, j))
        if gaussian:
            v = np.diag(S) * S[jj, jj] + S[:, jj] ** 2
        else:
            U = X[:, a_plus] @ S
            prod = U * U[:, [jj]]
            v = np.mean(prod * prod, axis=0) - 0.5 * (omega[a_plus, j] ** 2 + omega[j, a_plus] ** 2)
        low = v <= VARIANCE_FLOOR
        floored += int(np.count_nonzero(low))
        var[a_plus, j] = np.where(low, VARIANCE_FLOOR, v)
    return var, floored


def desparsified_variances(omega, X=None, gaussian=True):
    """Variance matrix for ``T`` built from ``omega`` (all entries defined)."""
    omega = as_matrix(omega, "omega")
    if gaussian:
        d = np.diag(omega)
        v = np.outer(d, d) + 0.5 * (omega ** 2 + omega.T ** 2)
    else:
        X = as_matrix(X, "data")
        V = X @ omega
        W = V * V
        v = W.T @ W / X.shape[0] - 0.5 * (omega ** 2 + omega.T ** 2)
    low = v <= VARIANCE_FLOOR
    return np.where(low, VARIANCE_FLOOR, v), int(np.count_nonzero(low))


def _symmetric_source_variance(var_us, omega_us):
    """Variance for ``Omega_s`` entries: taken from the orientation that supplied the value."""
    a, b = np.abs(omega_us), np.abs(omega_us.T)
    upper = np.triu(var_us) + np.triu(var_us, 1).T
    own = np.where(a < b, var_us, np.where(a > b, var_us.T, upper))
    other = np.where(a < b, var_us.T, np.where(a > b, var_us, upper.T))
    return np.where(np.isfinite(own), own, other)


def build_inference(estimate, X, kind, point, alpha_level=0.05):
    """Variances, null Z-scores and confidence intervals for one point estimate.

    Parameters
    ----------
    estimate : PrecisionEstimate
    X : ndarray, shape (n, p)
        The data the estimate was fitted on (needed by general kinds).
    kind : VarianceKind or str
    point : Point or str
        ``"US"``, ``"S"`` or ``"T"``.  ``T`` is always desparsified from
        ``estimate.omega_us``.
    alpha_level : float
        CIs have nominal coverage ``1 - alpha_level``.
    """
    kind = VarianceKind(kind)
    point = Point(point)
    n = estimate.n
    gaussian = kind.gaussian
    t_hat = desparsify(estimate.omega_us, estimate.sigma_hat) if point is Point.THAT else None
    pt = {Point.OMEGA_US: estimate.omega_us, Point.OMEGA_S: estimate.omega_s, Point.THAT: t_hat}[point]

    if kind.desparsified:
        var, floored = desparsified_variances(estimate.omega_us, X, gaussian)
    else:
        var, floored = undesparsified_variances(estimate, X, gaussian)
        if point is Point.OMEGA_S:
            var = _symmetric_source_variance(var, estimate.omega_us)
        elif point is Point.THAT:
            var = np.where(np.isfinite(var), var, var.T)

    defined = np.isfinite(var)
    sd = np.sqrt(np.where(defined, var, 1.0))
    z = np.where(defined, np.sqrt(n) * pt / sd, np.nan)
    half = normal_quantile(1.0 - alpha_level / 2.0) * sd / np.sqrt(n)
    ci_low = np.where(defined, pt - half, np.nan)
    ci_high = np.where(defined, pt + half, np.nan)
    flags = []
    if floored:
        flags.append(f"floored_variances={floored}")
    return InferenceResult(
        point=pt,
        var_matrix=var,
        z_scores=z,
        ci_low=ci_low,
        ci_high=ci_high,
        variance_kind=kind,
        point_kind=point,
        n=n,
        alpha_level=alpha_level,
        t_hat=t_hat,
        floored=floored,
        undefined=int(np.count_nonzero(~defined)),
        flags=flags,
    )


def bh_fdr(pvalues, q):
    """Benjamini-Hochberg step-up; returns the sorted indices of rejected hypotheses."""
    p = np.asarray(pvalues, dtype=float).ravel()
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise InvalidPValue("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.empty(0, dtype=np.intp)
    ps = np.sort(p)
    ok = np.flatnonzero(ps <= q * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return np.empty(0, dtype=np.intp)
    cutoff = ps[ok[-1]]
    return np.flatnonzero(p <= cutoff)


def resolve_null_z(z):
    """Z-score per unordered pair: ``z[i, j]`` (``i < j``) if defined, else ``z[j, i]``."""
    z = np.asarray(z, dtype=float)
    upper = np.triu(np.ones(z.shape, dtype=bool), 1)
    first = np.where(upper, z, z.T)
    second = np.where(upper, z.T, z)
    return np.where(np.isfinite(first), first, second)


def threshold_by_z(values, z, support, fdr_level):
    """Keep ``values`` at BH-rejected tested locations and on the diagonal.

    Tested locations are the strictly-lower-triangular nonzeros of
    ``support``; ``z`` is read per unordered pair through
    :func:`resolve_null_z`.  Returns ``(matrix, rejected_pairs, undefined)``.
    """
    values = as_matrix(values, "values")
    zr = resolve_null_z(z)
    rows, cols = np.nonzero(np.tril(np.asarray(support) != 0, -1))
    zz = zr[rows, cols]
    ok = np.isfinite(zz)
    undefined = int(np.count_nonzero(~ok))
    rej = bh_fdr(two_sided_pvalue(zz[ok]), fdr_level)
    r_rows, r_cols = rows[ok][rej], cols[ok][rej]
    out = np.diag(np.diag(values)).astype(float)
    out[r_rows, r_cols] = values[r_rows, r_cols]
    out[r_cols, r_rows] = values[r_rows, r_cols]
    return out, list(zip(r_rows.tolist(), r_cols.tolist())), undefined


def threshold(spec, matrices, variances, n):
    """Thresholded matrix for ``spec``.

    Parameters
    ----------
    spec : ThresholdSpec
    matrices : mapping
        Point estimates keyed by ``"US"``, ``"S"``, ``"T"``.
    variances : mapping
        Variance matrices keyed the same way (NaN where undefined).
    n : int
    """
    pt = np.asarray(matrices[spec.z_source], dtype=float)
    var = np.asarray(variances[spec.z_source], dtype=float)
    defined = np.isfinite(var) & (var > 0)
    z = np.where(defined, np.sqrt(n) * pt / np.sqrt(np.where(defined, var, 1.0)), np.nan)
    out, _, _ = threshold_by_z(matrices[spec.value_source], z, matrices[spec.support_source], spec.fdr_level)
    return out


def variance_ordering_check(sigma_true, a_plus, i, j):
    """Compare population variances of the undesparsified and desparsified estimators.

    Returns ``(lhs, rhs, ok)`` where ``lhs`` is the Gaussian closed form on
    ``A+`` using the population covariance, ``rhs = Omega_ii Omega_jj +
    Omega_ij^2`` with ``Omega = inv(sigma_true)`` and ``ok = lhs <= rhs + 1e-10``.
    """
    sigma_true = as_matrix(sigma_true, "sigma")
    lhs = var_undesp_gaussian(sigma_true, a_plus, i, j)
    omega = spd_inverse(sigma_true)
    rhs = float(omega[i, i] * omega[j, j] + omega[i, j] ** 2)
    return lhs, rhs, lhs <= rhs + 1e-10


def _product_variance(a, b, kurtosis):
    """Var((a'u)(b'u)) for u with i.i.d. zero-mean, unit-variance entries of 4th moment ``kurtosis``."""
    aa, bb, ab = a @ a, b @ b, a @ b
    return float(aa * bb + ab ** 2 + (kurtosis - 3.0) * np.sum(a * a * b * b))


def population_var_undesp(sigma_true, a_plus, i, j, distribution="gaussian"):
    """Population variance of ``Omega_us[i, j]`` when the selected set is ``a_plus``.

    For ``"subgaussian"`` data ``x = sigma^{1/2} u`` with uniform ``u``.
    """
    sigma_true = as_matrix(sigma_true, "sigma")
    a_plus = as_index_set(a_plus, sigma_true.shape[0])
    if distribution == "gaussian":
        return var_undesp_gaussian(sigma_true, a_plus, i, j)
    ii, jj = _position(a_plus, i, j)
    S = _sub_inverse(sigma_true, a_plus)
    mix = spd_inverse_sqrt(spd_inverse(sigma_true))[a_plus, :]
    return _product_variance(mix.T @ S[ii], mix.T @ S[jj], UNIFORM_KURTOSIS)


def population_var_desp(omega_true, i, j, distribution="gaussian"):
    omega_true = as_matrix(omega_true, "omega")
    if distribution == "gaussian":
        return float(omega_true[i, i] * omega_true[j, j] + omega_true[i, j] ** 2)
    mix = spd_inverse_sqrt(omega_true)
    return _product_variance(mix @ omega_true[:, i], mix @ omega_true[:, j], UNIFORM_KURTOSIS)


def population_desp_variances(omega_true, distribution="gaussian"):
    """Matrix of population variances of ``T[i, j]`` for every entry.

    Gaussian: ``Omega_ii Omega_jj + Omega_ij^2``.  Uniform sub-Gaussian adds
    ``(m4 - 3) sum_k B_ki^2 B_kj^2`` with ``B = Omega^{1/2}``.
    """
    omega_true = as_matrix(omega_true, "omega")
    d = np.diag(omega_true)
    v = np.outer(d, d) + omega_true ** 2
    if distribution == "gaussian":
        return v
    B2 = spd_inverse_sqrt(spd_inverse(omega_true)) ** 2
    return v + (UNIFORM_KURTOSIS - 3.0) * (B2.T @ B2)


def point_bundle(estimate, X, gaussian=True):
    """Point estimates and matched variance matrices keyed by ``"US"``, ``"S"``, ``"T"``."""
    var_us, _ = undesparsified_variances(estimate, X, gaussian)
    var_t, _ = desparsified_variances(estimate.omega_us, X, gaussian)
    points = {
        "US": estimate.omega_us,
        "S": estimate.omega_s,
        "T": desparsify(estimate.omega_us, estimate.sigma_hat),
    }
    variances = {
        "US": var_us,
        "S": _symmetric_source_variance(var_us, estimate.omega_us),
        "T": var_t,
    }
    return points, variances
