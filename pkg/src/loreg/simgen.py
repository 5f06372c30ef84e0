"""Graph models, precision-matrix construction and seeded samplers.

Random streams come from numpy's Philox counter-based generator.  Each
stream is keyed by ``(seed, replication, purpose)`` through
``SeedSequence.spawn_key`` so the draws of one replication never depend on
how many others were run, or in which order.  Standard normals use numpy's
ziggurat sampler (``Generator.standard_normal``).
"""

from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleGroups
from .linalg import cholesky, spd_inverse, spd_inverse_sqrt, symmetric_eigen_extremes

FAMILIES = ("band", "random", "hub", "cluster")
PURPOSES = {"graph": 0, "data": 1, "split": 2, "test": 3}


def make_rng(seed, replication=0, purpose="data"):
    """Independent Philox stream for ``(seed, replication, purpose)``."""
    code = PURPOSES[purpose] if isinstance(purpose, str) else int(purpose)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), code))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GraphSpec:
    family: str
    p: int
    seed: int = 0
    group_size: int = 10
    edge_prob: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown graph family {self.family!r}; expected one of {FAMILIES}")
        if self.p < 4 and self.family != "band":
            raise ValueError("p must be at least 4")
        if self.family in ("hub", "cluster") and self.p % self.group_size:
            raise IndivisibleGroups(f"p={self.p} is not divisible by group_size={self.group_size}")

    def resolved_edge_prob(self):
        if self.edge_prob is not None:
            return self.edge_prob
        return 4.0 / self.p if self.family == "random" else 0.6


def edge_count(M):
    """Number of nonzero strictly-upper-triangular entries."""
    M = np.asarray(M)
    return int(np.count_nonzero(np.triu(M, 1)))


def precision_from_adjacency(A):
    """``A + (|lambda_min(A)| + 0.1) I``."""
    A = np.asarray(A, dtype=float)
    lmin = symmetric_eigen_extremes(A)[0] if A.any() else 0.0
    return A + (abs(lmin) + 0.1) * np.eye(A.shape[0])


def gen_band(p):
    if p < 3:
        raise ValueError("band graph needs p >= 3")
    lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return 1.0 * (lag == 0) + 0.5 * (lag == 1) + 0.3 * (lag == 2)


def _symmetric_bernoulli(p, prob, rng, mask=None):
    draws = rng.random((p, p)) < prob
    A = np.triu(draws, 1)
    if mask is not None:
        A &= mask
    A = A | A.T
    return A.astype(float)


def gen_random(p, rng, edge_prob=None):
    prob = 4.0 / p if edge_prob is None else edge_prob
    return precision_from_adjacency(_symmetric_bernoulli(p, prob, rng))


def _groups(p, group_size):
    if p % group_size:
        raise IndivisibleGroups(f"p={p} is not divisible by group_size={group_size}")
    return np.arange(p) // group_size


def gen_hub(p, group_size=10, rng=None):
    # the hub of each contiguous block is its first node, so rng is unused
    _groups(p, group_size)
    A = np.zeros((p, p))
    for start in range(0, p, group_size):
        A[start, start + 1:start + group_size] = 1.0
        A[start + 1:start + group_size, start] = 1.0
    return precision_from_adjacency(A)


def gen_cluster(p, group_size=10, rng=None, edge_prob=0.6):
    grp = _groups(p, group_size)
    same = grp[:, None] == grp[None, :]
    return precision_from_adjacency(_symmetric_bernoulli(p, edge_prob, rng, mask=same))


def generate_precision(spec):
    """Precision matrix for a :class:`GraphSpec` (graph stream of ``spec.seed``)."""
    rng = make_rng(spec.seed, 0, "graph")
    if spec.family == "band":
        return gen_band(spec.p)
    if spec.family == "random":
        return gen_random(spec.p, rng, spec.resolved_edge_prob())
    if spec.family == "hub":
        return gen_hub(spec.p, spec.group_size, rng)
    return gen_cluster(spec.p, spec.group_size, rng, spec.resolved_edge_prob())


def sample_gaussian(omega, n, rng):
    """``n`` draws of N(0, inv(omega)) as rows: ``X = G L'`` with ``L L' = inv(omega)``."""
    L = cholesky(spd_inverse(omega))
    G = rng.standard_normal((n, L.shape[0]))
    return G @ L.T


def sample_subgaussian(omega, n, rng):
    """Rows ``x = omega^{-1/2} u`` with ``u`` i.i.d. uniform on [-sqrt 3, sqrt 3]."""
    R = spd_inverse_sqrt(omega)
    s3 = np.sqrt(3.0)
    U = rng.uniform(-s3, s3, size=(n, R.shape[0]))
    return U @ R


def sample(omega, n, rng, distribution="gaussian"):
    if distribution == "gaussian":
        return sample_gaussian(omega, n, rng)
    if distribution == "subgaussian":
        return sample_subgaussian(omega, n, rng)
    raise ValueError(f"unknown distribution {distribution!r}")
