import math

import numpy as np
import pytest
from scipy import integrate as sint
from scipy import stats

import oracles
from mixedcopula.copula_model import (CopulaParams, LatentLayout, decode,
                                      n_theta, rescale_to_unit_diagonal)
from mixedcopula.likelihood import (build_terms, loglik_direct,
                                    loglik_gradient_term, loglik_term,
                                    row_key, total_loglik)
from mixedcopula.marginals import fit_marginals
from mixedcopula.mvn_rqmc import RqmcConfig
from mixedcopula.schema import Schema, Variable
from mixedcopula.simulate import SimConfig, simulate

TIGHT = RqmcConfig(min_samples=60000, max_samples=300000, rel_tol=1e-7)


def make_schema(*spec):
    vs = []
    for i, s in enumerate(spec):
        kind, levels = (s, None) if isinstance(s, str) else s
        vs.append(Variable(f"v{i}", kind, levels))
    return Schema(tuple(vs))


def random_table(schema, n, rng, missing=0.0):
    """Arbitrary table in which every category shows up."""
    cols = []
    for v in schema:
        if v.kind == "continuous":
            cols.append(rng.normal(size=n))
        else:
            cols.append(np.arange(n) % v.levels)
    data = np.column_stack(cols).astype(float)
    for j in range(data.shape[1]):
        data[:, j] = rng.permutation(data[:, j])
    data[rng.random(data.shape) < missing] = np.nan
    return data


def random_params(layout, rng, mean_scale=0.5):
    A = rng.standard_normal((layout.W_eff, layout.W_eff + 2))
    S = rescale_to_unit_diagonal(A @ A.T, layout)
    return CopulaParams.from_sigma(layout, S,
                                   rng.normal(0, mean_scale, layout.n_mean))


def single_term(data, schema, i, marginals=None):
    marginals = marginals or fit_marginals(data, schema)
    terms = build_terms(data, marginals, LatentLayout(schema))
    return next(terms.select([i]).terms())


# -- closed-form examples --------------------------------------------------------

def test_single_standard_continuous():
    schema = make_schema("continuous")
    data = np.array([[-2.0], [-1.0], [0.0], [1.0], [2.0]])
    lay = LatentLayout(schema)
    params = CopulaParams(lay, np.zeros(n_theta(lay)))
    est = loglik_term(single_term(data, schema, 2), params)
    assert est.value == pytest.approx(-0.918939, abs=1e-6)
    assert est.value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert est.converged and est.error_estimate == 0.0


def test_single_binary_half():
    schema = make_schema("binary")
    data = np.array([[0.0], [1.0]])
    lay = LatentLayout(schema)
    params = CopulaParams(lay, np.zeros(n_theta(lay)))
    est = loglik_term(single_term(data, schema, 1), params)
    assert est.value == pytest.approx(math.log(0.5), abs=1e-12)


def test_symmetric_multinomial_third():
    schema = make_schema(("multinomial", 3))
    data = np.array([[0.0], [1.0], [2.0]])
    lay = LatentLayout(schema)
    # exchangeable category latents: differences to the reference have
    # correlation one half, and all three categories are equally likely
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    params = CopulaParams.from_sigma(lay, S, np.zeros(2))
    terms = build_terms(data, fit_marginals(data, schema), lay)
    res = total_loglik(terms, params, RqmcConfig(rel_tol=1e-4,
                                                 max_samples=200000))
    assert res.values == pytest.approx([math.log(1 / 3)] * 3, abs=1e-3)


def test_binary_mean_gradient():
    schema = make_schema("binary")
    data = np.array([[0.0], [1.0]])
    lay = LatentLayout(schema)
    params = CopulaParams(lay, np.zeros(n_theta(lay)))
    value, grad = loglik_gradient_term(single_term(data, schema, 1), params)
    assert value == pytest.approx(math.log(0.5), abs=1e-12)
    # d/dmu log Phi(mu) at 0 = phi(0) / Phi(0)
    assert grad[-1] == pytest.approx(0.79788, abs=2e-3)
    assert grad[-1] == pytest.approx(2 * stats.norm.pdf(0), abs=2e-3)


def test_fully_continuous_gradient_is_exact():
    schema = make_schema("continuous", "continuous", "continuous")
    rng = np.random.default_rng(0)
    data = random_table(schema, 20, rng)
    lay = LatentLayout(schema)
    params = random_params(lay, rng)
    marg = fit_marginals(data, schema)
    term = single_term(data, schema, 3, marg)
    value, grad = loglik_gradient_term(term, params)

    def f(theta):
        S, _ = decode(lay, theta)
        return stats.multivariate_normal(np.zeros(3), S).logpdf(term.z)

    assert value == pytest.approx(f(params.theta), abs=1e-12)
    h = 1e-6
    fd = [(f(params.theta + h * e) - f(params.theta - h * e)) / (2 * h)
          for e in np.eye(params.theta.size)]
    assert grad == pytest.approx(np.array(fd), abs=1e-7)


# -- oracles -------------------------------------------------------------------

def test_mixed_row_matches_quadrature():
    schema = make_schema("continuous", "binary", ("ordinal", 4))
    rng = np.random.default_rng(1)
    data = random_table(schema, 40, rng)
    lay = LatentLayout(schema)
    params = random_params(lay, rng)
    marg = fit_marginals(data, schema)
    S, mu = params.sigma, params.mean
    for i in range(4):
        term = single_term(data, schema, i, marg)
        est = loglik_term(term, params, RqmcConfig(rel_tol=1e-5,
                                                   max_samples=400000))
        zc = term.z[0]
        (a1, b1), (a2, b2) = zip(term.lower, term.upper)
        dens = stats.multivariate_normal(mu, S)

        def f(y2, y1):
            return dens.pdf([zc, y1, y2])

        val, _ = sint.dblquad(f, a1, b1, a2, b2, epsabs=1e-12, epsrel=1e-10)
        assert est.value == pytest.approx(math.log(val), abs=1e-3)


def test_three_discrete_row_matches_quadrature():
    schema = make_schema("binary", ("ordinal", 3), ("ordinal", 4))
    rng = np.random.default_rng(2)
    data = random_table(schema, 24, rng)
    lay = LatentLayout(schema)
    params = random_params(lay, rng)
    marg = fit_marginals(data, schema)
    for i in range(3):
        term = single_term(data, schema, i, marg)
        est = loglik_term(term, params, RqmcConfig(rel_tol=1e-5,
                                                   max_samples=400000))
        val, _ = oracles.quad_box(term.lower, term.upper, params.mean,
                                  params.sigma)
        assert est.value == pytest.approx(math.log(val), abs=1e-3)


def fd_theta(term, params, config, h=1e-4):
    f = lambda t: loglik_term(term, CopulaParams(params.layout, t),
                              config).value
    return np.array([(f(params.theta + h * e) - f(params.theta - h * e))
                     / (2 * h) for e in np.eye(params.theta.size)])


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    schema = make_schema("continuous", "binary", ("ordinal", 4),
                         ("multinomial", 3))
    rng = np.random.default_rng(10 + seed)
    data = random_table(schema, 30, rng, missing=0.15)
    lay = LatentLayout(schema)
    params = random_params(lay, rng)
    marg = fit_marginals(data, schema)
    term = single_term(data, schema, seed, marg)
    value, grad = loglik_gradient_term(term, params, TIGHT)
    assert value == loglik_term(term, params, TIGHT).value
    fd = fd_theta(term, params, TIGHT)
    scale = np.abs(grad).max()
    assert np.allclose(grad, fd, rtol=1e-2, atol=1e-3 * scale)


# -- totals ----------------------------------------------------------------------

def mixed_problem(seed, n=60, missing=0.2):
    schema = make_schema("continuous", "binary", ("ordinal", 3),
                         ("multinomial", 3), "continuous")
    rng = np.random.default_rng(seed)
    data = random_table(schema, n, rng, missing)
    lay = LatentLayout(schema)
    return schema, data, lay, random_params(lay, rng), \
        fit_marginals(data, schema)


def test_duplicating_rows_doubles_exactly():
    schema, data, lay, params, marg = mixed_problem(3)
    one = total_loglik(build_terms(data, marg, lay), params, want_grad=True)
    two = total_loglik(build_terms(np.vstack([data, data]), marg, lay), params,
                       want_grad=True)
    assert two.value == 2 * one.value
    assert two.gradient == pytest.approx(2 * one.gradient, rel=1e-12,
                                         abs=1e-12)


def test_row_order_is_irrelevant():
    schema, data, lay, params, marg = mixed_problem(4)
    perm = np.random.default_rng(0).permutation(data.shape[0])
    a = total_loglik(build_terms(data, marg, lay), params, want_grad=True)
    b = total_loglik(build_terms(data[perm], marg, lay), params,
                     want_grad=True)
    assert a.value == b.value
    assert np.array_equal(a.gradient, b.gradient)
    assert np.array_equal(np.sort(a.values), np.sort(b.values))


def test_independence_factorizes():
    schema = make_schema("continuous", "binary", ("ordinal", 4))
    rng = np.random.default_rng(5)
    data = random_table(schema, 50, rng, missing=0.2)
    lay = LatentLayout(schema)
    params = CopulaParams.from_sigma(lay, np.eye(3), np.array([0.3]))
    marg = fit_marginals(data, schema)
    res = total_loglik(build_terms(data, marg, lay), params)
    expected = 0.0
    for i in range(data.shape[0]):
        x = data[i]
        if not np.isnan(x[0]):
            expected += stats.norm.logpdf(marg[0].to_latent(x[0]))
        if not np.isnan(x[1]):
            expected += stats.norm.logcdf(0.3 if x[1] == 1 else -0.3)
        if not np.isnan(x[2]):
            b = marg[2].bounds()
            k = int(x[2])
            expected += math.log(stats.norm.cdf(b[k + 1])
                                 - stats.norm.cdf(b[k]))
    assert res.value == pytest.approx(expected, rel=1e-10)


def test_missing_variable_leaves_terms_unchanged():
    schema, data, lay, params, marg = mixed_problem(6)
    res = total_loglik(build_terms(data, marg, lay), params, want_grad=True)
    big = Schema(schema.variables + (Variable("extra", "ordinal", 3),))
    blay = LatentLayout(big)
    S = np.eye(blay.W_eff)
    S[:lay.W_eff, :lay.W_eff] = params.sigma
    bparams = CopulaParams.from_sigma(blay, S, params.mean_free)
    bdata = np.column_stack([data, np.full(data.shape[0], np.nan)])
    extra = fit_marginals(np.array([[0.0], [1.0], [2.0]]),
                          make_schema(("ordinal", 3)))
    bres = total_loglik(build_terms(bdata, marg + extra, blay), bparams,
                        want_grad=True)
    # identical up to the rounding of re-encoding the enlarged Sigma
    assert bres.values == pytest.approx(res.values, abs=1e-12)
    n_chol = lay.W_eff * (lay.W_eff + 1) // 2
    assert bres.gradient[:n_chol] == pytest.approx(res.gradient[:n_chol],
                                                   abs=1e-9)
    assert bres.gradient[-lay.n_mean:] == pytest.approx(
        res.gradient[-lay.n_mean:], abs=1e-9)


def test_fully_missing_rows_are_skipped():
    schema, data, lay, params, marg = mixed_problem(7)
    data2 = np.vstack([data, np.full((2, data.shape[1]), np.nan)])
    terms = build_terms(data2, marg, lay)
    assert terms.n_terms == data.shape[0]
    assert terms.empty_rows.tolist() == [data.shape[0], data.shape[0] + 1]
    assert total_loglik(terms, params).value == \
        total_loglik(build_terms(data, marg, lay), params).value


def test_direct_form_agrees_without_multinomials():
    schema = make_schema("continuous", "binary", ("ordinal", 4), "continuous",
                         "binary")
    rng = np.random.default_rng(8)
    data = random_table(schema, 40, rng, missing=0.2)
    lay = LatentLayout(schema)
    params = random_params(lay, rng)
    marg = fit_marginals(data, schema)
    cfg = RqmcConfig(rel_tol=1e-4, max_samples=100000)
    for i in range(8):
        a = loglik_term(single_term(data, schema, i, marg), params, cfg)
        b = loglik_direct(data[i], params, marg, cfg)
        assert abs(a.value - b.value) <= a.error_estimate + b.error_estimate \
            + 1e-12
    with pytest.raises(ValueError):
        _, d2, _, p2, m2 = mixed_problem(9)
        loglik_direct(d2[0], p2, m2)


def test_underflowing_row_is_flagged_with_zero_gradient():
    schema = make_schema("binary", "continuous")
    data = np.array([[0.0, 0.1], [1.0, 0.5], [1.0, 0.9]])
    lay = LatentLayout(schema)
    theta = np.zeros(n_theta(lay))
    theta[-1] = -40.0  # P(X = 1) = Phi(-40) underflows
    params = CopulaParams(lay, theta)
    res = total_loglik(build_terms(data, fit_marginals(data, schema), lay),
                       params, want_grad=True)
    assert res.n_underflow == 2
    assert res.n_unconverged >= 2
    assert np.all(np.isfinite(res.values))
    assert np.isfinite(res.gradient).all()
    # only the row with X = 0 moves the mean
    assert res.gradient[-1] == pytest.approx(
        -stats.norm.pdf(40.0) / stats.norm.cdf(40.0), abs=1e-12)


def test_row_key_ignores_missing_cells_only():
    assert row_key([1.0, np.nan, 2.0]) == row_key([1.0, np.nan, 2.0])
    assert row_key([1.0, np.nan]) == row_key([1.0, np.nan, np.nan])
    assert row_key([1.0, 2.0]) != row_key([2.0, 1.0])
    assert row_key([0.0, np.nan]) == row_key([-0.0, np.nan])
    assert row_key([np.nan, 1.0]) != row_key([1.0, np.nan])


def test_likelihood_higher_at_truth():
    wins = 0
    for rep in range(20):
        sim = simulate(SimConfig(n=500, seed=500 + rep))
        lay = LatentLayout(sim.schema)
        marg = fit_marginals(sim.masked, sim.schema)
        terms = build_terms(sim.masked, marg, lay)
        truth = CopulaParams.from_sigma(lay, sim.sigma,
                                        sim.mean[lay.mean_index])
        null = CopulaParams.from_sigma(lay, np.eye(lay.W_eff),
                                       sim.mean[lay.mean_index])
        wins += total_loglik(terms, truth).value > total_loglik(terms,
                                                                null).value
    assert wins >= 19
