import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

import oracles
from conftest import as_box
from mixedcopula.mvn_rqmc import (
    Constant1, FactorizationError, GaussianParams, Identity, IntegrationBox,
    OuterProduct, RqmcConfig, box_probabilities, cdf_gradient, derive_seed,
    integrate, num_threads, phi, phi_inv, reorder_and_factor)

TIGHT = RqmcConfig(min_samples=20000, max_samples=900000, rel_tol=1e-5)


def random_problem(rng, k, p_inf=0.2):
    cov = oracles.random_correlation(rng, k)
    lower, upper = oracles.random_box(rng, k, p_inf)
    return IntegrationBox(lower, upper), GaussianParams(rng.normal(0, 0.5, k),
                                                        cov)


def pooled_se(*parts):
    return math.sqrt(sum(p * p for p in parts))


# -- phi / phi_inv -------------------------------------------------------------

def test_phi_symmetry_points():
    assert phi(0.0) == 0.5
    assert phi_inv(0.5) == 0.0


def test_phi_at_one_matches_erf():
    assert phi(1.0) == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))),
                                     abs=1e-15)
    assert phi(1.0) == pytest.approx(0.841344746, abs=1e-9)


def test_phi_inv_saturates():
    assert phi_inv(0.0) == -8.0
    assert phi_inv(1.0) == 8.0
    assert np.all(phi_inv(np.array([0.0, 1.0])) == [-8.0, 8.0])


@given(st.floats(-6.0, 6.0))
def test_phi_inv_inverts_phi(x):
    # for large positive x the double phi(x) sits within one ulp of 1, which
    # alone moves the quantile by ulp / density; below that limit 1e-9 holds
    p = phi(x)
    representable = np.spacing(p) / stats.norm.pdf(x)
    assert abs(phi_inv(p) - x) <= 1e-9 + representable


@given(st.floats(-6.0, 3.0))
def test_phi_inv_inverts_phi_tightly(x):
    assert abs(phi_inv(phi(x)) - x) <= 1e-9


# -- reordering ----------------------------------------------------------------

def test_reorder_single_variable():
    prob = reorder_and_factor(IntegrationBox([-1.0], [2.0]),
                              GaussianParams([0.3], [[2.25]]))
    assert list(prob.permutation) == [0]
    assert prob.factor == pytest.approx(np.array([[1.5]]))


def test_reorder_identity_puts_unbounded_last():
    lower = np.array([-np.inf, -np.inf, -np.inf])
    upper = np.array([0.0, np.inf, 0.0])
    prob = reorder_and_factor(IntegrationBox(lower, upper),
                              GaussianParams(np.zeros(3), np.eye(3)))
    allowed = oracles.greedy_permutations(lower, upper, np.eye(3))
    assert list(prob.permutation) in allowed
    assert prob.permutation[-1] == 1
    # ties between the two half lines go to the lower index
    assert list(prob.permutation) == [0, 2, 1]


@pytest.mark.parametrize("seed", range(8))
def test_reorder_matches_greedy_enumeration(seed):
    rng = np.random.default_rng(seed)
    k = 4
    cov = oracles.random_correlation(rng, k)
    lower, upper = oracles.random_box(rng, k)
    prob = reorder_and_factor(IntegrationBox(lower, upper),
                              GaussianParams(np.zeros(k), cov))
    assert list(prob.permutation) in \
        oracles.greedy_permutations(lower, upper, cov)


@pytest.mark.parametrize("seed", range(5))
def test_factor_reconstructs_permuted_covariance(seed):
    rng = np.random.default_rng(100 + seed)
    box, params = random_problem(rng, 6)
    prob = reorder_and_factor(box, params)
    p = prob.permutation
    O = prob.factor
    target = params.cov[np.ix_(p, p)]
    assert np.linalg.norm(O.T @ O - target) <= 1e-10 * np.linalg.norm(target)
    assert np.all(np.diag(O) > 0)
    assert sorted(p) == list(range(6))
    assert prob.lower == pytest.approx(box.lower[p] - params.mean[p])


def test_singular_covariance_raises_with_pivot():
    v = np.array([1.0, 1.0, 0.0])
    cov = np.outer(v, v) / 2 + np.diag([0.0, 0.0, 1.0])
    cov[0, 0] = cov[1, 1] = 1.0
    cov[0, 1] = cov[1, 0] = 1.0
    with pytest.raises(FactorizationError) as info:
        reorder_and_factor(IntegrationBox.unbounded(3),
                           GaussianParams(np.zeros(3), cov))
    assert info.value.pivot in (0, 1)
    with pytest.raises(FactorizationError):
        integrate(IntegrationBox.unbounded(3), GaussianParams(np.zeros(3), cov))


def test_invalid_box_rejected():
    with pytest.raises(ValueError):
        IntegrationBox([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        IntegrationBox([0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        GaussianParams([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])


def test_config_validation():
    with pytest.raises(ValueError):
        RqmcConfig(min_samples=10, max_samples=5)
    with pytest.raises(ValueError):
        RqmcConfig(n_randomizations=1)
    with pytest.raises(ValueError):
        RqmcConfig(rel_tol=0.0)


# -- integrate -----------------------------------------------------------------

CDF_CFG = RqmcConfig(rel_tol=1e-4, max_samples=200000)


def test_integrate_univariate_half():
    cdf, _ = integrate(IntegrationBox([-np.inf], [0.0]),
                       GaussianParams([0.0], [[1.0]]), Constant1(), CDF_CFG)
    assert cdf.value == pytest.approx(0.5, abs=1e-4)


def test_integrate_independent_quadrant():
    cdf, _ = integrate(IntegrationBox([0.0, 0.0], [np.inf, np.inf]),
                       GaussianParams(np.zeros(2), np.eye(2)), Constant1(),
                       CDF_CFG)
    assert cdf.value == pytest.approx(0.25, abs=1e-4)


def test_integrate_orthant_closed_form():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    cdf, _ = integrate(IntegrationBox([-np.inf, -np.inf], [0.0, 0.0]),
                       GaussianParams(np.zeros(2), cov), Constant1(), CDF_CFG)
    exact = 0.25 + math.asin(0.5) / (2 * math.pi)
    assert exact == pytest.approx(1 / 3, abs=1e-15)
    assert cdf.value == pytest.approx(exact, abs=1e-4)


def test_integrate_identity_matches_rejection_sampler(frozen):
    ref = frozen["truncated_mean"]
    lower, upper = as_box(ref)
    box = IntegrationBox(lower, upper)
    params = GaussianParams(ref["mean"], ref["cov"])
    cfg = RqmcConfig(min_samples=20000, max_samples=900000, rel_tol=1e-4)
    cdf, num = integrate(box, params, Identity(), cfg)
    tmean = num.value / cdf.value
    assert cdf.value == pytest.approx(ref["prob"], abs=3 * pooled_se(
        ref["prob_se"], cdf.error_estimate / 3))
    # delta-method error of the ratio from the two RQMC error bars
    rq = np.hypot(num.error_estimate / cdf.value,
                  np.abs(tmean) * cdf.error_estimate / cdf.value) / 3
    for j in range(3):
        assert abs(tmean[j] - ref["truncated_mean"][j]) <= 3 * pooled_se(
            ref["truncated_mean_se"][j], rq[j])


def test_outer_product_gives_second_moments():
    box = IntegrationBox([-np.inf, -np.inf], [np.inf, np.inf])
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    params = GaussianParams([0.5, -1.0], cov)
    cdf, num = integrate(box, params, OuterProduct(), RqmcConfig(
        rel_tol=1e-4, max_samples=400000))
    assert cdf.value == 1.0
    expected = cov + np.outer(params.mean, params.mean)
    assert num.value.reshape(2, 2) == pytest.approx(expected, abs=2e-3)


def test_identity_univariate_truncated_mean():
    cdf, num = integrate(IntegrationBox([0.0], [np.inf]),
                         GaussianParams([0.0], [[1.0]]), Identity(),
                         RqmcConfig(rel_tol=1e-5, max_samples=400000))
    assert num.value[0] / cdf.value == pytest.approx(
        math.sqrt(2 / math.pi), abs=1e-4)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_unbounded_box_is_exactly_one(k):
    rng = np.random.default_rng(k)
    params = GaussianParams(rng.normal(size=k),
                            oracles.random_correlation(rng, k))
    cdf, _ = integrate(IntegrationBox.unbounded(k), params)
    assert cdf.value == 1.0
    assert cdf.error_estimate == 0.0
    assert cdf.converged


def test_underflowing_probability_flagged():
    cdf, _ = integrate(IntegrationBox([40.0, -np.inf], [np.inf, np.inf]),
                       GaussianParams(np.zeros(2), np.eye(2)))
    assert cdf.value > 0.0
    assert cdf.value <= 1e-300
    assert not cdf.converged
    _, num = integrate(IntegrationBox([40.0, -np.inf], [np.inf, np.inf]),
                       GaussianParams(np.zeros(2), np.eye(2)), Identity())
    assert not num.converged


@pytest.mark.parametrize("seed", range(10))
def test_samples_within_budget(seed):
    rng = np.random.default_rng(200 + seed)
    k = 2 + seed % 5
    box, params = random_problem(rng, k)
    cfg = RqmcConfig(min_samples=500, max_samples=10000, rel_tol=1e-6)
    for g in (Constant1(), Identity()):
        cdf, num = integrate(box, params, g, cfg)
        assert cfg.min_samples <= cdf.samples_used <= cfg.max_samples
        assert cdf.error_estimate >= 0
        assert np.all(np.asarray(num.error_estimate) >= 0)
    est, _, _ = cdf_gradient(box, params, cfg)
    assert cfg.min_samples <= est.samples_used <= cfg.max_samples


def test_converged_flag_matches_tolerance():
    rng = np.random.default_rng(3)
    box, params = random_problem(rng, 4, p_inf=0.0)
    loose = RqmcConfig(rel_tol=5e-2)
    cdf, _ = integrate(box, params, None, loose)
    assert cdf.converged
    assert cdf.error_estimate <= max(loose.abs_tol, loose.rel_tol * cdf.value)
    strict = RqmcConfig(rel_tol=1e-9, abs_tol=1e-15, max_samples=2000)
    cdf, _ = integrate(box, params, None, strict)
    assert not cdf.converged


@pytest.mark.parametrize("seed", range(12))
def test_frozen_low_dimensional_oracles(frozen, seed):
    # quick subset of the acceptance run: dimension <= 4 problems
    problems = [p for p in frozen["cdf_problems"] if p["dim"] <= 4]
    p = problems[seed]
    lower, upper = as_box(p)
    cdf, _ = integrate(IntegrationBox(lower, upper),
                       GaussianParams(p["mean"], p["cov"]), None,
                       RqmcConfig(rel_tol=1e-4, max_samples=1_000_000))
    assert abs(cdf.value - p["value"]) <= 1e-3


# -- invariants ----------------------------------------------------------------

INV_CFG = RqmcConfig(rel_tol=1e-3, max_samples=100000)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-3.0, 3.0))
def test_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    k = 1 + seed % 5
    box, params = random_problem(rng, k)
    a, _ = integrate(box, params, None, INV_CFG)
    b, _ = integrate(IntegrationBox(box.lower + shift, box.upper + shift),
                     GaussianParams(params.mean + shift, params.cov), None,
                     INV_CFG)
    assert abs(a.value - b.value) <= max(a.error_estimate + b.error_estimate,
                                         1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), grow=st.floats(0.0, 2.0))
def test_enlarging_box_never_decreases(seed, grow):
    rng = np.random.default_rng(seed)
    k = 1 + seed % 5
    box, params = random_problem(rng, k)
    j = seed % k
    upper = box.upper.copy()
    upper[j] += grow
    a, _ = integrate(box, params, None, INV_CFG)
    b, _ = integrate(IntegrationBox(box.lower, upper), params, None, INV_CFG)
    assert b.value >= a.value - (a.error_estimate + b.error_estimate) - 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_permutation_invariance(seed, data):
    rng = np.random.default_rng(seed)
    k = 2 + seed % 5
    box, params = random_problem(rng, k)
    p = np.array(data.draw(st.permutations(range(k))))
    a, _ = integrate(box, params, None, INV_CFG)
    b, _ = integrate(IntegrationBox(box.lower[p], box.upper[p]),
                     GaussianParams(params.mean[p], params.cov[np.ix_(p, p)]),
                     None, INV_CFG)
    assert abs(a.value - b.value) <= a.error_estimate + b.error_estimate + 1e-12


def test_bit_determinism_and_seed_dependence():
    rng = np.random.default_rng(11)
    box, params = random_problem(rng, 5)
    a, na = integrate(box, params, Identity(), RqmcConfig(seed=5))
    b, nb = integrate(box, params, Identity(), RqmcConfig(seed=5))
    c, _ = integrate(box, params, Identity(), RqmcConfig(seed=6))
    assert a.value == b.value
    assert np.array_equal(na.value, nb.value)
    assert a.value != c.value
    g1 = cdf_gradient(box, params, RqmcConfig(seed=5))
    g2 = cdf_gradient(box, params, RqmcConfig(seed=5))
    assert g1[0].value == g2[0].value
    assert np.array_equal(g1[1], g2[1]) and np.array_equal(g1[2], g2[2])


def test_batch_independent_of_thread_count():
    rng = np.random.default_rng(12)
    k, n = 4, 40
    cov = oracles.random_correlation(rng, k)
    lower = np.empty((n, k))
    upper = np.empty((n, k))
    for i in range(n):
        lower[i], upper[i] = oracles.random_box(rng, k)
    means = rng.normal(0, 0.5, (n, k))
    seeds = [derive_seed(3, i) for i in range(n)]
    outs = []
    for t in (1, 4):
        with num_threads(t):
            outs.append(box_probabilities(lower, upper, means, cov, seeds=seeds,
                                          want_grad=True))
    for key in ("value", "error", "samples", "d_mean", "d_cov"):
        assert np.array_equal(outs[0][key], outs[1][key])


def test_batch_rows_match_single_calls():
    rng = np.random.default_rng(13)
    k, n = 3, 6
    cov = oracles.random_correlation(rng, k)
    lower = np.empty((n, k))
    upper = np.empty((n, k))
    for i in range(n):
        lower[i], upper[i] = oracles.random_box(rng, k)
    means = rng.normal(0, 0.5, (n, k))
    seeds = [derive_seed(9, i) for i in range(n)]
    out = box_probabilities(lower, upper, means, cov, seeds=seeds)
    for i in range(n):
        est, _ = integrate(IntegrationBox(lower[i], upper[i]),
                           GaussianParams(means[i], cov), None,
                           RqmcConfig(seed=seeds[i]))
        assert est.value == out["value"][i]


def test_derive_seed_is_order_sensitive():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(-5, 2**70) < 2**64


# -- gradients -----------------------------------------------------------------

def test_gradient_univariate_orthant():
    est, dmean, dcov = cdf_gradient(IntegrationBox([-np.inf], [0.0]),
                                    GaussianParams([0.0], [[1.0]]))
    assert est.value == pytest.approx(0.5, abs=1e-12)
    assert dmean[0] == pytest.approx(-stats.norm.pdf(0.0), abs=2e-3)
    # dPhi(-w / s) / d(s^2) at w = 0 vanishes
    assert dcov[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_gradient_univariate_variance():
    # P(X < 1) = Phi(1 / s); derivative in s^2 at s = 1 is -phi(1) / 2
    _, dmean, dcov = cdf_gradient(IntegrationBox([-np.inf], [1.0]),
                                  GaussianParams([0.0], [[1.0]]))
    assert dcov[0, 0] == pytest.approx(-0.5 * stats.norm.pdf(1.0), abs=1e-10)
    assert dmean[0] == pytest.approx(-stats.norm.pdf(1.0), abs=1e-10)


def test_gradient_factorizes_under_independence():
    lower = np.array([-0.5, -np.inf])
    upper = np.array([1.0, 0.7])
    mean = np.array([0.2, -0.1])
    est, dmean, dcov = cdf_gradient(IntegrationBox(lower, upper),
                                    GaussianParams(mean, np.eye(2)),
                                    RqmcConfig(min_samples=200000,
                                               max_samples=400000))
    a, b = lower - mean, upper - mean
    p = stats.norm.cdf(b) - stats.norm.cdf(a)
    dp = stats.norm.pdf(a) - stats.norm.pdf(b)
    assert est.value == pytest.approx(p[0] * p[1], rel=1e-6)
    assert dmean[0] == pytest.approx(dp[0] * p[1], rel=1e-4)
    assert dmean[1] == pytest.approx(p[0] * dp[1], rel=1e-4)
    assert np.allclose(dcov, dcov.T)


def fd_gradient(box, params, cfg, h=1e-4):
    k = params.dim
    f = lambda m, c: integrate(box, GaussianParams(m, c), None, cfg)[0].value
    gm = np.empty(k)
    gc = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        gm[i] = (f(params.mean + e, params.cov)
                 - f(params.mean - e, params.cov)) / (2 * h)
        for j in range(i + 1):
            E = np.zeros((k, k))
            E[i, j] = E[j, i] = h
            d = (f(params.mean, params.cov + E)
                 - f(params.mean, params.cov - E)) / (2 * h)
            gc[i, j] = gc[j, i] = d if i == j else d / 2
    return gm, gc


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(300 + seed)
    box, params = random_problem(rng, 4)
    est, dmean, dcov = cdf_gradient(box, params, TIGHT)
    gm, gc = fd_gradient(box, params, TIGHT)
    scale = max(np.abs(dmean).max(), np.abs(dcov).max())
    assert np.allclose(dmean, gm, rtol=1e-2, atol=1e-3 * scale)
    assert np.allclose(dcov, gc, rtol=1e-2, atol=1e-3 * scale)
