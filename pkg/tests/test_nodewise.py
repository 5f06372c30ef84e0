import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loreg.errors import DegenerateColumn
from loreg.nodewise import (
    TuningSpec,
    auto_t_max,
    estimate,
    fit_column_loreg,
    hbic,
    population_nodewise,
    select_t,
    standardize,
    symmetrize,
)
from loreg.simgen import FAMILIES, GraphSpec, gen_band, generate_precision, make_rng, sample
from oracles import gauss_jordan_inverse, ols_lstsq


def band_data(p, n, seed):
    return sample(gen_band(p), n, make_rng(seed, 0, "data"))


def test_auto_t_max():
    # floor(112 / (log 300 * log log 112)) = floor(112 / (5.7038 * 1.5515)) = floor(12.66)
    assert math.log(300) == pytest.approx(5.7038, abs=1e-4)
    assert math.log(math.log(112)) == pytest.approx(1.5515, abs=1e-4)
    assert auto_t_max(112, 300) == 12
    assert TuningSpec(t_max="auto").resolve_t_max(112, 300) == 12
    assert TuningSpec(t_max=50).resolve_t_max(100, 10) == 9


def test_standardize():
    rng = np.random.default_rng(0)
    X0 = rng.standard_normal((50, 4))
    X0 = X0 / np.sqrt(np.mean(X0 ** 2, axis=0))
    Z, gamma, S = standardize(X0)
    np.testing.assert_allclose(Z, X0, rtol=1e-14)
    np.testing.assert_allclose(gamma, 1.0, rtol=1e-14)
    Zc, _, _ = standardize(3.7 * X0)
    np.testing.assert_allclose(Zc, Z, rtol=1e-14)
    norms = np.linalg.norm(standardize(rng.standard_normal((30, 5)) * [1, 10, 100, 0.1, 2])[0], axis=0)
    np.testing.assert_allclose(norms, np.sqrt(30), rtol=1e-12)
    X0[:, 2] = 0.0
    with pytest.raises(DegenerateColumn):
        standardize(X0)


def test_hbic_closed_forms():
    X = band_data(6, 80, 1)
    Z, _, _ = standardize(X)
    n, p = X.shape
    pen = math.log(p - 1) * math.log(math.log(n))
    j = 2
    assert hbic([], j, X, Z) == pytest.approx(n * math.log(X[:, j] @ X[:, j] / n))
    rest = [k for k in range(p) if k != j]
    b = ols_lstsq(Z[:, rest], X[:, j])
    r = X[:, j] - Z[:, rest] @ b
    assert hbic(rest, j, X, Z) == pytest.approx(n * math.log(r @ r / n) + (p - 1) * pen, rel=1e-12)
    with pytest.raises(ValueError):
        hbic([j], j, X, Z)


def test_hbic_nested_loss():
    X = band_data(8, 60, 2)
    Z, _, _ = standardize(X)
    n, p = X.shape
    pen = math.log(p - 1) * math.log(math.log(n))
    small = hbic([1, 3], 0, X, Z) - 2 * pen
    big = hbic([1, 3, 5, 6], 0, X, Z) - 4 * pen
    assert big <= small + 1e-9


def test_select_t_zero_max():
    X = band_data(6, 50, 3)
    Z, _, _ = standardize(X)
    t, trace = select_t(1, X, Z, 0)
    assert t == 0 and len(trace) == 1
    with pytest.raises(ValueError):
        select_t(1, X, Z, 6)


def test_select_t_trace_and_ties():
    X = band_data(10, 200, 4)
    Z, _, _ = standardize(X)
    t, trace = select_t(4, X, Z, 6)
    assert [k for k, _ in trace] == list(range(7))
    best = min(v for _, v in trace)
    assert t == min(k for k, v in trace if v == best)


@pytest.mark.xfail(strict=True, reason="HBIC admits a spurious predictor in about 1/4 of draws (measured 73-79/100)")
def test_select_t_pure_noise_column():
    zero = 0
    for s in range(100):
        X = band_data(10, 400, s)
        X[:, -1] = make_rng(s, 0, "test").standard_normal(400)
        Z, _, _ = standardize(X)
        zero += select_t(9, X, Z, 9)[0] == 0
    assert zero >= 90


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="HBIC over-selects at p=50, n=400 (measured 64/100)")
def test_select_t_band_interior():
    hits = 0
    for s in range(100):
        X = band_data(50, 400, s)
        Z, _, _ = standardize(X)
        hits += select_t(25, X, Z, 20)[0] == 4
    assert hits >= 90


def test_fit_column_t0():
    X = band_data(5, 40, 5)
    Z, g, _ = standardize(X)
    col = fit_column_loreg(1, X, Z, g, 0)
    s2 = X[:, 1] @ X[:, 1] / 40
    assert col.sigma2 == pytest.approx(s2)
    assert col.omega_jj == pytest.approx(40 / (X[:, 1] @ X[:, 1]))
    assert np.all(col.alpha == 0) and np.all(col.omega_col == 0) and col.active.size == 0


def test_fit_column_consistency_p3():
    omega = np.array([[2.0, -0.8, 0.0], [-0.8, 2.0, -0.8], [0.0, -0.8, 2.0]])
    X = sample(omega, 10000, make_rng(7))
    Z, g, _ = standardize(X)
    for j, t in ((0, 1), (1, 2), (2, 1)):
        col = fit_column_loreg(j, X, Z, g, t)
        got = np.zeros(3)
        got[j] = col.omega_jj
        got[np.delete(np.arange(3), j)] = col.omega_col
        assert np.max(np.abs(got - omega[:, j])) <= 0.1


def test_fit_column_scaling():
    X = band_data(6, 100, 8)
    c = 2.5
    Z, g, _ = standardize(X)
    Zc, gc, _ = standardize(c * X)
    a = fit_column_loreg(3, X, Z, g, 2)
    b = fit_column_loreg(3, c * X, Zc, gc, 2)
    assert b.omega_jj == pytest.approx(a.omega_jj / c ** 2, rel=1e-10)
    np.testing.assert_allclose(b.omega_col, a.omega_col / c ** 2, rtol=1e-10, atol=1e-15)


def test_fit_column_active_in_full_coordinates():
    X = band_data(8, 300, 9)
    Z, g, _ = standardize(X)
    col = fit_column_loreg(5, X, Z, g, 2)
    assert 5 not in col.active
    assert set(col.active.tolist()) <= set(range(8))
    rest = np.delete(np.arange(8), 5)
    assert set(rest[np.flatnonzero(col.omega_col)].tolist()) <= set(col.active.tolist())
    assert col.omega_jj == 1.0 / col.sigma2


def test_estimate_bivariate():
    sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
    X = sample(np.linalg.inv(sigma), 5000, make_rng(10))
    est = estimate(X, tuning=TuningSpec(t_max=1))
    target = np.array([[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])
    assert np.max(np.abs(est.omega_s - target)) <= 0.1


def test_symmetrize_rules():
    M = np.array([[1.0, 5.0], [-2.0, 3.0]])
    np.testing.assert_array_equal(symmetrize(M), [[1.0, -2.0], [-2.0, 3.0]])
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(symmetrize(S), S)
    # exact magnitude tie takes the upper-triangular value
    T = np.array([[1.0, 0.4], [-0.4, 1.0]])
    np.testing.assert_array_equal(symmetrize(T), [[1.0, 0.4], [0.4, 1.0]])


def test_estimate_invariants_and_determinism():
    X = band_data(30, 150, 11)
    a = estimate(X)
    b = estimate(X, n_jobs=4)
    np.testing.assert_array_equal(a.omega_us, b.omega_us)
    S, U = a.omega_s, a.omega_us
    np.testing.assert_array_equal(S, S.T)
    np.testing.assert_array_equal(np.diag(S), np.diag(U))
    assert np.all(np.abs(S) <= np.maximum(np.abs(U), np.abs(U.T)))
    # an off-diagonal entry survives only if both orientations are active
    for i, j in zip(*np.nonzero(np.triu(S, 1))):
        assert i in a.active_plus(j) and j in a.active_plus(i)
    for col in a.columns:
        rest = np.delete(np.arange(30), col.j)
        outside = np.setdiff1d(rest, col.active)
        assert np.all(U[outside, col.j] == 0)


def test_estimate_lasso_runs():
    X = band_data(12, 200, 12)
    est = estimate(X, "lasso")
    assert est.method == "lasso"
    assert all(c.sigma2 > 0 for c in est.columns)
    assert all(c.chosen_t in [float(x) for x in TuningSpec().lambdas] for c in est.columns)
    np.testing.assert_array_equal(est.omega_s, est.omega_s.T)


def test_fixed_t_full_gives_inverse():
    X = band_data(6, 200, 13)
    est = estimate(X, tuning=TuningSpec(fixed_t=5))
    np.testing.assert_allclose(est.omega_us, gauss_jordan_inverse(X.T @ X / 200), rtol=1e-9, atol=1e-12)


def test_unknown_method():
    with pytest.raises(ValueError):
        estimate(band_data(4, 20, 0), "glasso")


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("p", [10, 20, 30])
def test_population_identities(family, p):
    omega = generate_precision(GraphSpec(family, p, seed=p))
    sigma = np.linalg.inv(omega)
    assert np.max(np.abs(population_nodewise(sigma) - omega)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), p=st.integers(2, 8))
def test_property_symmetrize_idempotent(seed, p):
    M = np.random.default_rng(seed).standard_normal((p, p))
    M[np.random.default_rng(seed + 1).random((p, p)) < 0.3] = 0.0
    S = symmetrize(M)
    np.testing.assert_array_equal(symmetrize(S), S)
    np.testing.assert_array_equal(S, S.T)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="spurious mutual selections survive symmetrisation (measured 26/100 exact)")
def test_sparsistency_band_p50():
    omega = gen_band(50)
    exact = 0
    for s in range(100):
        est = estimate(band_data(50, 400, s))
        exact += np.array_equal(est.omega_s != 0, omega != 0)
    assert exact >= 95
