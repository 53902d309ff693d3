from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artpop.errors import RankDeficientDesign, TooFewDomains
from artpop.estimators import (
    DomainEstimates,
    PopulationMoments,
    bhf_estimate,
    fh_estimate,
    greg_estimate,
    ht_estimate,
    population_moments,
    run_estimators,
)
from artpop.estimators.common import FALLBACK, OUT_OF_SAMPLE
from artpop.estimators.nested_error import henderson3

from . import oracles
from .conftest import oracle_sample


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


@pytest.mark.parametrize("seed", range(8))
def test_all_estimators_match_oracles(seed):
    y, X, dom, mom = oracle_sample(seed)
    doms = mom.domains
    h = ht_estimate(y, dom, mom)
    o = oracles.ht(y, dom, doms)
    assert rel(h.estimate, [o[d][0] for d in doms]) < 1e-12
    assert rel(h.mse_hat, [o[d][1] for d in doms]) < 1e-12

    g = greg_estimate(y, X, dom, mom)
    o = oracles.greg(y, X, dom, doms, mom.xbar)
    assert rel(g.estimate, [o[d][0] for d in doms]) < 1e-10
    assert rel(g.mse_hat, [o[d][1] for d in doms]) < 1e-10

    f, fit = fh_estimate(h, mom)
    s2, _, est, mse = oracles.fh(h.estimate, h.mse_hat, mom.xbar)
    assert fit.sigma2_v == pytest.approx(s2, rel=1e-8, abs=1e-12)
    assert rel(f.estimate, est) < 1e-8
    assert rel(f.mse_hat, mse) < 1e-8

    b, bfit = bhf_estimate(y, X, dom, mom)
    (sv, se), _, est, mse = oracles.bhf(y, X, dom, doms, mom.xbar)
    assert bfit.sigma2_v == pytest.approx(sv, rel=1e-8, abs=1e-12)
    assert bfit.sigma2_e == pytest.approx(se, rel=1e-8)
    assert rel(b.estimate, est) < 1e-8
    assert rel(b.mse_hat, mse) < 1e-8


def test_bhf_variance_components_agree_with_statsmodels():
    sm = pytest.importorskip("statsmodels.formula.api")
    y, X, dom, mom = oracle_sample(0, n=300, n_domains=15)
    _, fit = bhf_estimate(y, X, dom, mom)
    df = pd.DataFrame({"y": y, "a": X[:, 0], "b": X[:, 1], "g": dom.astype(str)})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = sm.mixedlm("y ~ a + b", df, groups=df["g"]).fit(reml=True)
    assert fit.sigma2_e == pytest.approx(ref.scale, rel=1e-3)
    assert fit.sigma2_v == pytest.approx(float(ref.cov_re.iloc[0, 0]), rel=1e-3)


def test_direct_flags_for_small_domains():
    mom = PopulationMoments(("1", "2", "3"), ("a",), np.array([10, 10, 10]), np.zeros((3, 1)))
    y = np.array([1.0, 2.0, 3.0, 5.0])
    h = ht_estimate(y, np.array(["1", "1", "1", "2"]), mom)
    assert h.flags == ["", "domain_too_small", "no_sample"]
    assert h.estimate[1] == 5.0 and np.isnan(h.mse_hat[1]) and np.isnan(h.estimate[2])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 50.0), st.floats(-100.0, 100.0), st.integers(0, 7))
def test_affine_equivariance(a, c, seed):
    """Estimates follow y -> a y + c; MSE estimates scale by a^2."""
    y, X, dom, mom = oracle_sample(seed)
    y2 = a * y + c
    for fn in (lambda yy: ht_estimate(yy, dom, mom), lambda yy: greg_estimate(yy, X, dom, mom),
               lambda yy: fh_estimate(ht_estimate(yy, dom, mom), mom)[0],
               lambda yy: bhf_estimate(yy, X, dom, mom)[0]):
        r1, r2 = fn(y), fn(y2)
        np.testing.assert_allclose(r2.estimate, a * r1.estimate + c, rtol=1e-6, atol=1e-6 * (abs(c) + a))
        np.testing.assert_allclose(r2.mse_hat, a * a * r1.mse_hat, rtol=1e-6)


def test_fh_shrinkage_is_convex_and_monotone_in_psi():
    rng = np.random.default_rng(3)
    D = 40
    xbar = rng.normal(size=(D, 1))
    psi = np.linspace(0.2, 5.0, D)
    theta = 1 + 2 * xbar[:, 0] + rng.normal(0, 1.0, D)
    direct = theta + rng.normal(0, np.sqrt(psi))
    mom = PopulationMoments(tuple(str(i) for i in range(D)), ("a",), np.full(D, 100), xbar)
    d = DomainEstimates("ht", mom.domains, np.full(D, 30), direct, psi, [""] * D)
    res, fit = fh_estimate(d, mom)
    gam = res.extras["gamma"]
    assert fit.converged and fit.sigma2_v > 0
    assert np.all((gam >= 0) & (gam <= 1))
    assert np.all(np.diff(gam) < 0)        # psi increasing
    np.testing.assert_allclose(res.estimate, gam * direct + (1 - gam) * res.extras["synthetic"])


def test_fh_moment_fallback_is_flagged():
    y, X, dom, mom = oracle_sample(1, n=200, n_domains=20)
    res, fit = fh_estimate(ht_estimate(y, dom, mom), mom, max_iter=1)
    assert not fit.converged and fit.method == "moments"
    assert all(f.startswith(FALLBACK) for f in res.flags)


def test_fh_needs_enough_domains():
    y, X, dom, mom = oracle_sample(0, n=20, n_domains=4)
    with pytest.raises(TooFewDomains):
        fh_estimate(ht_estimate(y, dom, mom), mom)


def test_bhf_shrinkage_monotone_in_sample_size():
    rng = np.random.default_rng(8)
    sizes = np.arange(2, 22)
    dom = np.repeat([str(i) for i in range(len(sizes))], sizes)
    X = rng.normal(size=(len(dom), 1))
    v = rng.normal(0, 1.0, len(sizes))
    y = 1 + X[:, 0] + v[dom.astype(int)] + rng.normal(0, 2.0, len(dom))
    mom = PopulationMoments(tuple(str(i) for i in range(len(sizes))), ("a",),
                            np.full(len(sizes), 500), rng.normal(size=(len(sizes), 1)))
    res, fit = bhf_estimate(y, X, dom, mom)
    gam = res.extras["gamma"]
    assert fit.sigma2_v > 0
    assert np.all((gam >= 0) & (gam <= 1)) and np.all(np.diff(gam) > 0)
    np.testing.assert_allclose(res.estimate,
                               gam * res.extras["direct"] + (1 - gam) * res.extras["synthetic"])


def test_bhf_unsampled_domain_gets_synthetic():
    y, X, dom, mom = oracle_sample(2)
    mom6 = PopulationMoments(mom.domains + ("6",), mom.variables, np.full(6, 1000),
                             np.vstack([mom.xbar, [[0.1, 0.2]]]))
    res, fit = bhf_estimate(y, X, dom, mom6)
    assert res.flags[-1] == OUT_OF_SAMPLE
    assert res.estimate[-1] == pytest.approx(res.extras["synthetic"][-1])
    x6 = np.array([1.0, 0.1, 0.2])
    assert res.mse_hat[-1] == pytest.approx(fit.sigma2_v + x6 @ fit.cov_beta @ x6)


def test_bhf_fallback_and_errors():
    y, X, dom, mom = oracle_sample(4)
    res, fit = bhf_estimate(y, X, dom, mom, max_iter=1)
    assert fit.method == "henderson3"
    g = mom.index(dom)
    sv, se = henderson3(y, np.column_stack([np.ones(len(y)), X]), g)
    assert (fit.sigma2_v, fit.sigma2_e) == (sv, se)
    assert all(f == FALLBACK for f in res.flags)
    with pytest.raises(RankDeficientDesign):
        bhf_estimate(y, np.column_stack([X[:, 0], X[:, 0]]), dom, mom)
    with pytest.raises(TooFewDomains):
        bhf_estimate(y[:5], X[:5], np.array(["1"] * 5), mom)


def test_run_estimators_collects_failures():
    y, X, dom, mom = oracle_sample(0, n=20, n_domains=4)
    res, failures = run_estimators(y, X, dom, mom)
    assert set(res) == {"ht", "greg", "bhf"}
    assert failures["fh"].startswith("TooFewDomains")


def test_population_moments(small_population):
    mom = population_moments(small_population, ["tcc", "elev"])
    d = mom.domains[0]
    rows = small_population.domain_id == d
    assert mom.N[0] == rows.sum()
    assert mom.xbar[0, 1] == pytest.approx(small_population.column("elev")[rows].mean())
