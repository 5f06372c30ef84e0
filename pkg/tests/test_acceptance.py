"""Acceptance suite.  Each criterion prints one PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py`` or directly as a script.
"""

import time

import numpy as np
import pytest

from loreg.inference import desparsify, threshold_by_z, undesparsified_variances, variance_ordering_check
from loreg.nodewise import estimate, population_nodewise
from loreg.sdar import SdarConfig, kkt_residual, sdar_fit
from loreg.simgen import (
    FAMILIES,
    GraphSpec,
    edge_count,
    gen_band,
    gen_cluster,
    gen_hub,
    generate_precision,
    make_rng,
    sample,
)
from loreg.simulation import SimulationSpec, run_simulation
from oracles import orthogonal_design, random_spd, sdar_orthogonal_solution

SEED = 2024


def report(number, ok, detail, started):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{time.perf_counter() - started:.1f}s]"
    print(line, flush=True)
    return line


@pytest.fixture
def announce(capsys):
    def emit(number, ok, detail, started):
        with capsys.disabled():
            print()
            report(number, ok, detail, started)
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def band_run():
    started = time.perf_counter()
    spec = SimulationSpec(GraphSpec("band", 200), n=400, replications=100, methods=("loreg:S",),
                          seed=SEED, normality=True, save_estimates=False)
    rep = run_simulation(spec, parallelism=None)
    return rep, time.perf_counter() - started


def criterion_1(rep):
    per = rep["methods"]["loreg:S"]["per_replication"][:20]
    fro = float(np.mean([r["losses"]["frobenius"] for r in per]))
    mx = float(np.mean([r["losses"]["max"] for r in per]))
    ok = abs(fro - 1.832) <= 0.10 and abs(mx - 0.269) <= 0.03
    return ok, f"band p=200 n=400, 20 reps: frobenius {fro:.4f} (1.832+-0.10), max {mx:.4f} (0.269+-0.03)"


def criterion_2(rep):
    per = rep["methods"]["loreg:S"]["per_replication"][:20]
    mcc = float(np.mean([r["support"]["mcc"] for r in per]))
    sens = float(np.mean([r["support"]["sensitivity"] for r in per]))
    ok = mcc >= 0.99 and sens >= 0.995
    return ok, f"band p=200 n=400, 20 reps: MCC {mcc:.4f} (>=0.99), sensitivity {sens:.4f} (>=0.995)"


def criterion_3(rep):
    s = rep["normality"]["loreg:US"]["S_hat"]
    cov, sdz = s["cov_rate"]["mean"], s["sdz"]["mean"]
    ok = 0.91 <= cov <= 0.97 and 0.92 <= sdz <= 1.10
    return ok, (f"band p=200 n=400, 100 reps, {s['entries']} entries: CovRate {cov:.4f} in [0.91, 0.97], "
                f"SDZ {sdz:.4f} in [0.92, 1.10]")


def criterion_4():
    rng = make_rng(SEED, 0, "test")
    worst_orth = 0.0
    support_ok = True
    for _ in range(200):
        p = int(rng.integers(1, 17))
        t = int(rng.integers(1, min(4, p) + 1))
        Z = orthogonal_design(64, p, rng)
        y = Z @ (rng.standard_normal(p) * (rng.random(p) < 0.5)) + rng.standard_normal(64)
        r = sdar_fit(y, Z, SdarConfig(t))
        A, beta = sdar_orthogonal_solution(Z, y, t)
        support_ok &= np.array_equal(r.active, A)
        worst_orth = max(worst_orth, float(np.max(np.abs(r.beta - beta))))
    worst_kkt, converged = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(20, 121))
        p = int(rng.integers(2, 41))
        t = int(rng.integers(1, min(8, p, n - 1) + 1))
        Z = rng.standard_normal((n, p))
        Z *= np.sqrt(n) / np.linalg.norm(Z, axis=0)
        beta = np.zeros(p)
        beta[rng.choice(p, size=t, replace=False)] = rng.normal(0, 2, t)
        y = Z @ beta + rng.standard_normal(n)
        r = sdar_fit(y, Z, SdarConfig(t))
        if r.converged:
            converged += 1
            worst_kkt = max(worst_kkt, kkt_residual(r, y, Z))
    ok = support_ok and worst_orth <= 1e-10 and worst_kkt <= 1e-8
    return ok, (f"orthogonal: supports {'identical' if support_ok else 'DIFFER'}, max coef error {worst_orth:.1e}; "
                f"general: {converged}/200 converged, max KKT residual {worst_kkt:.1e}")


def criterion_5():
    worst = 0.0
    for family in FAMILIES:
        for p in (10, 20, 30):
            omega = generate_precision(GraphSpec(family, p, seed=SEED))
            worst = max(worst, float(np.max(np.abs(population_nodewise(np.linalg.inv(omega)) - omega))))
    return worst <= 1e-8, f"4 families x p in (10, 20, 30): max error {worst:.1e} (<=1e-8)"


def criterion_6():
    rng = make_rng(SEED, 1, "test")
    violations, eq_fail, worst_eq = 0, 0, 0.0
    for _ in range(500):
        p = int(rng.integers(4, 16))
        omega = generate_precision(GraphSpec("random", p, seed=int(rng.integers(2 ** 31))))
        sigma = np.linalg.inv(omega)
        j = int(rng.integers(p))
        true_a = np.flatnonzero(omega[:, j])
        extra = rng.choice(p, size=int(rng.integers(0, p)), replace=False)
        a_plus = np.union1d(true_a, extra)
        i = int(rng.choice(a_plus))
        _, _, ok = variance_ordering_check(sigma, a_plus, i, j)
        violations += not ok
        lhs, rhs, _ = variance_ordering_check(sigma, np.arange(p), i, j)
        gap = abs(lhs - rhs) / rhs
        worst_eq = max(worst_eq, gap)
        eq_fail += gap > 1e-10
    ok = violations == 0 and eq_fail == 0
    return ok, f"500 configurations: {violations} ordering violations, full-set max relative gap {worst_eq:.1e}"


def criterion_7():
    omega = gen_band(10)
    gaps = []
    for k, n in enumerate((2000, 8000, 32000)):
        X = sample(omega, n, make_rng(SEED, k, "data"))
        est = estimate(X)
        g, _ = undesparsified_variances(est, X, True)
        m, _ = undesparsified_variances(est, X, False)
        valid = np.isfinite(g) & np.isfinite(m)
        gaps.append(float(np.median(np.abs(m[valid] - g[valid]) / g[valid])))
    ok = gaps[0] > gaps[1] > gaps[2] and gaps[2] <= 0.05
    return ok, "median relative gap at n=2000/8000/32000: " + " / ".join(f"{x:.4f}" for x in gaps) + \
        " (decreasing, last <=0.05)"


def criterion_8():
    rng = make_rng(SEED, 2, "test")
    worst = 0.0
    for _ in range(50):
        p = int(rng.integers(2, 21))
        S = random_spd(p, rng, cond=float(rng.uniform(2, 100)))
        O = np.linalg.inv(S)
        worst = max(worst, float(np.max(np.abs(desparsify(O, S) - O))))
    return worst <= 1e-8, f"50 SPD matrices: max |T - inv(S)| {worst:.1e} (<=1e-8)"


def criterion_9():
    band_ok = all(edge_count(gen_band(p)) == 2 * p - 3 for p in (10, 50, 200))
    hub_ok = all(edge_count(gen_hub(p)) == p - p // 10 for p in (20, 100, 200))
    counts = np.array([edge_count(gen_cluster(100, rng=make_rng(s, 0, "graph"))) for s in range(200)])
    se = float(np.std(counts, ddof=1) / np.sqrt(200))
    cluster_ok = abs(counts.mean() - 270) <= 3 * se
    lmin = min(float(np.min(np.linalg.eigvalsh(generate_precision(GraphSpec(f, p, seed=s)))))
               for f in ("random", "hub", "cluster") for p in (20, 50, 100) for s in range(10))
    ok = band_ok and hub_ok and cluster_ok and lmin >= 0.1 - 1e-8
    return ok, (f"band 2p-3 {band_ok}, hub p-p/10 {hub_ok}, cluster mean {counts.mean():.2f} vs 270 "
                f"(3 SE = {3 * se:.2f}), min eigenvalue {lmin:.6f}")


def criterion_10():
    p, reps = 50, 400
    support = np.ones((p, p))
    fdp = []
    for r in range(reps):
        z = make_rng(SEED, r, "test").standard_normal((p, p))
        z = np.tril(z, -1) + np.tril(z, -1).T
        _, rejected, _ = threshold_by_z(support, z, support, 0.05)
        fdp.append(1.0 if rejected else 0.0)  # every rejection is false under the global null
    fdr = float(np.mean(fdp))
    return fdr <= 0.07, f"global null p=50, {reps} reps: empirical FDR {fdr:.4f} (<=0.07)"


def test_criterion_01_norm_losses(band_run, announce):
    started = time.perf_counter() - band_run[1]
    announce(1, *criterion_1(band_run[0]), started)


def test_criterion_02_support_recovery(band_run, announce):
    announce(2, *criterion_2(band_run[0]), time.perf_counter())


def test_criterion_03_normality(band_run, announce):
    announce(3, *criterion_3(band_run[0]), time.perf_counter())


@pytest.mark.parametrize("number, check", [
    (4, criterion_4), (5, criterion_5), (6, criterion_6), (7, criterion_7),
    (8, criterion_8), (9, criterion_9), (10, criterion_10),
])
def test_criterion(number, check, announce):
    started = time.perf_counter()
    announce(number, *check(), started)


if __name__ == "__main__":
    t0 = time.perf_counter()
    spec = SimulationSpec(GraphSpec("band", 200), n=400, replications=100, methods=("loreg:S",),
                          seed=SEED, normality=True, save_estimates=False)
    rep = run_simulation(spec)
    results = [report(k, *f(rep), t0) for k, f in ((1, criterion_1), (2, criterion_2), (3, criterion_3))]
    for k, f in ((4, criterion_4), (5, criterion_5), (6, criterion_6), (7, criterion_7),
                 (8, criterion_8), (9, criterion_9), (10, criterion_10)):
        t = time.perf_counter()
        results.append(report(k, *f(), t))
    raise SystemExit(0 if all(r.startswith("PASS") for r in results) else 1)
