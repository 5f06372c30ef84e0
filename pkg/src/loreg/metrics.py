"""Evaluation metrics: matrix-norm losses, support recovery, CI/normality
summaries over replications, and a plug-in LDA scorer."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatch, InsufficientReplications
from .inference import normal_quantile
from .linalg import as_matrix, spectral_norm


@dataclass
class LossReport:
    l1: float
    spectral: float
    frobenius: float
    max: float

    def as_dict(self):
        return asdict(self)


@dataclass
class SupportReport:
    tp: int
    tn: int
    fp: int
    fn: int
    precision: float
    sensitivity: float
    specificity: float
    mcc: float
    degenerate: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def _same_shape(a, b):
    a = as_matrix(a, "estimate")
    b = as_matrix(b, "truth")
    if a.shape != b.shape:
        raise DimensionMismatch(f"estimate {a.shape} vs truth {b.shape}")
    return a, b


def norm_losses(est, truth):
    """L1 (max column sum), spectral, Frobenius and max-entry norms of ``est - truth``."""
    est, truth = _same_shape(est, truth)
    D = est - truth
    return LossReport(
        l1=float(np.max(np.sum(np.abs(D), axis=0))),
        spectral=spectral_norm(D),
        frobenius=float(np.sqrt(np.sum(D * D))),
        max=float(np.max(np.abs(D))),
    )


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def support_metrics(est, truth, tol=0.0):
    """Confusion counts and rates over the off-diagonal entries.

    An entry counts as nonzero when ``|value| > tol``.  Zero denominators
    give a rate of 0 and add the metric name to ``degenerate``.
    """
    est, truth = _same_shape(est, truth)
    off = ~np.eye(est.shape[0], dtype=bool)
    e = (np.abs(est) > tol) & off
    t = (np.abs(truth) > tol) & off
    tp = int(np.count_nonzero(e & t))
    fp = int(np.count_nonzero(e & ~t))
    fn = int(np.count_nonzero(~e & t))
    tn = int(np.count_nonzero(~e & ~t & off))
    flags = []
    precision = _ratio(tp, tp + fp, "precision", flags)
    sensitivity = _ratio(tp, tp + fn, "sensitivity", flags)
    specificity = _ratio(tn, fp + tn, "specificity", flags)
    den = float(tp + fp) * float(tp + fn) * float(tn + fp) * float(tn + fn)
    mcc = _ratio(float(tp) * tn - float(fp) * fn, math.sqrt(den), "mcc", flags)
    return SupportReport(tp, tn, fp, fn, precision, sensitivity, specificity, mcc, flags)


def intersect_supports(matrices):
    """Entries nonzero in every matrix (diagonal included)."""
    mask = None
    for M in matrices:
        nz = np.asarray(M) != 0
        mask = nz if mask is None else mask & nz
    return mask


def true_support(truth):
    return np.asarray(truth) != 0


@dataclass
class NormalityReport:
    entry_set: str
    entries: np.ndarray
    true_length: np.ndarray
    avg_length: np.ndarray
    cov_rate: np.ndarray
    abs_avg_z: np.ndarray
    sdz: np.ndarray
    used: np.ndarray
    dropped: int

    def summary(self):
        out = {"entry_set": self.entry_set, "entries": int(len(self.entries)), "dropped": self.dropped}
        for name in ("true_length", "avg_length", "cov_rate", "abs_avg_z", "sdz"):
            v = getattr(self, name)
            v = v[np.isfinite(v)]
            out[name] = {
                "mean": float(np.mean(v)) if v.size else None,
                "sd": float(np.std(v, ddof=1)) if v.size > 1 else None,
            }
        return out


def normality_metrics(points, variances, truth, sigma_true, n, alpha, entries, entry_set="S_hat"):
    """Per-entry CI and Z-score diagnostics across replications.

    Parameters
    ----------
    points : sequence of (p, p) arrays
        Point estimates, one per replication.
    variances : sequence of (p, p) arrays
        Matching variance estimates; NaN marks an undefined entry.  A
        replication with an undefined variance is dropped for that entry.
    truth : (p, p) array
    sigma_true : (p, p) array or None
        Population standard deviations used for TrueLength.
    n : int
    alpha : float
        CIs have nominal level ``1 - alpha``.
    entries : (p, p) bool array or sequence of (i, j)
    entry_set : str
        Label for the entry set.

    Returns
    -------
    NormalityReport
        SDZ uses the sample standard deviation (ddof=1).
    """
    points = np.asarray(points, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if points.shape[0] < 2:
        raise InsufficientReplications("need at least two replications")
    if points.shape != variances.shape:
        raise DimensionMismatch("points and variances differ in shape")
    truth = np.asarray(truth, dtype=float)
    entries = np.asarray(entries)
    if entries.dtype == bool:
        entries = np.argwhere(entries)
    entries = entries.reshape(-1, 2)
    rows, cols = entries[:, 0], entries[:, 1]
    q = normal_quantile(1.0 - alpha / 2.0)

    pt = points[:, rows, cols]
    var = variances[:, rows, cols]
    ok = np.isfinite(var) & (var > 0)
    sd = np.sqrt(np.where(ok, var, 1.0))
    target = truth[rows, cols]
    z = np.sqrt(n) * (pt - target) / sd
    half = q * sd / np.sqrt(n)
    covered = (pt - half <= target) & (target <= pt + half)
    used = ok.sum(axis=0)
    keep = used >= 2

    def avg(x):
        s = np.where(ok, x, 0.0).sum(axis=0)
        return np.where(keep, s / np.maximum(used, 1), np.nan)

    zbar = avg(z)
    zdev = np.where(ok, z - zbar, 0.0)
    sdz = np.where(keep, np.sqrt((zdev ** 2).sum(axis=0) / np.maximum(used - 1, 1)), np.nan)
    if sigma_true is None:
        true_len = np.full(len(rows), np.nan)
    else:
        true_len = 2.0 * q * np.asarray(sigma_true, dtype=float)[rows, cols] / np.sqrt(n)
    return NormalityReport(
        entry_set=entry_set,
        entries=entries,
        true_length=true_len,
        avg_length=avg(2.0 * half),
        cov_rate=avg(covered.astype(float)),
        abs_avg_z=np.abs(zbar),
        sdz=sdz,
        used=used,
        dropped=int(np.count_nonzero(~ok)),
    )


@dataclass
class LdaModel:
    omega: np.ndarray
    class_means: tuple
    priors: tuple

    def __post_init__(self):
        p0, p1 = self.priors
        if p0 <= 0 or p1 <= 0 or abs(p0 + p1 - 1.0) > 1e-12:
            raise ValueError("priors must be positive and sum to 1")

    @classmethod
    def fit(cls, X, labels, omega):
        """Class means and priors from training data with a given precision estimate."""
        X = as_matrix(X, "data")
        labels = np.asarray(labels).astype(int)
        means = tuple(X[labels == k].mean(axis=0) for k in (0, 1))
        n1 = np.count_nonzero(labels == 1)
        pi1 = n1 / labels.size
        return cls(np.asarray(omega, dtype=float), means, (1.0 - pi1, pi1))


def lda_scores(x, model):
    """``delta_k(x) = x' Omega mu_k - mu_k' Omega mu_k / 2 + log pi_k`` for k = 0, 1."""
    x = np.asarray(x, dtype=float)
    omega = np.asarray(model.omega, dtype=float)
    if x.shape[-1] != omega.shape[0]:
        raise DimensionMismatch(f"x has length {x.shape[-1]}, omega is {omega.shape}")
    out = []
    for mu, pi in zip(model.class_means, model.priors):
        mu = np.asarray(mu, dtype=float)
        w = omega @ mu
        out.append(x @ w - 0.5 * mu @ w + math.log(pi))
    return tuple(out)


def lda_classify(x, model):
    """1 where ``delta_1 > delta_0``, else 0 (ties go to class 0)."""
    d0, d1 = lda_scores(x, model)
    return (np.asarray(d1) > np.asarray(d0)).astype(int)
