"""Sparse precision-matrix estimation by L0-penalised nodewise regression.

Modules
-------
linalg      dense SPD helpers
sdar        support detection and root finding for L0 least squares
lassocd     coordinate-descent Lasso baseline
nodewise    column-by-column precision estimation with HBIC tuning
inference   desparsified estimator, variances, Z-scores, BH thresholding
simgen      graph models and seeded samplers
metrics     losses, support recovery, normality summaries, LDA
simulation  Monte Carlo harness and run directories
cli         ``loreg`` command-line front end
"""

__version__ = "0.1.0"

from .nodewise import PrecisionEstimate, TuningSpec, estimate, symmetrize  # noqa: E402
from .sdar import SdarConfig, SdarResult, sdar_fit  # noqa: E402

__all__ = [
    "PrecisionEstimate",
    "SdarConfig",
    "SdarResult",
    "TuningSpec",
    "__version__",
    "estimate",
    "sdar_fit",
    "symmetrize",
]
