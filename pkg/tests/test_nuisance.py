import warnings

import numpy as np
import pytest
from scipy import optimize, stats
from scipy.special import expit

from didrivers.errors import InsufficientRows, SingularDesign, UnknownLearner
from didrivers.exposure import assemble_dose, attach_dose
from didrivers.nuisance import EPS_PROPENSITY, LearnerSpec, PerfectSeparation, fit_dose_density, \
    fit_nuisances, fit_propensity, fit_trend, positivity_diagnostic, weighted_logit, wls
from didrivers.panel import MatchedPeriodSlice, slice_matched_period


def _slice(n1=60, n0=60, seed=0, q=1, dose=None):
    rng = np.random.default_rng(seed)
    n = n1 + n0
    group = np.r_[np.ones(n1, int), np.zeros(n0, int)]
    x = rng.normal(size=(n, 2)) + group[:, None] * 0.5
    D = rng.normal(3, 1, size=(n1, q)) + 0.5 * x[:n1, :1] if dose is None else dose
    y0 = rng.normal(size=n)
    y1 = y0 + 1 + x @ [2.0, -1.0]
    y1[:n1] += D[:, 0] * 3
    s = MatchedPeriodSlice(1, np.array([f"u{i}" for i in range(n)], dtype=object), group,
                           y0, y1, x, ("x1", "x2"))
    return s.with_dose(D, tuple(f"d{k + 1}" for k in range(q)))


def test_wls_matches_lstsq():
    rng = np.random.default_rng(1)
    F = np.column_stack([np.ones(50), rng.normal(size=(50, 3))])
    y = rng.normal(size=50)
    w = rng.uniform(0.5, 2, 50)
    ref = np.linalg.lstsq(F * np.sqrt(w)[:, None], y * np.sqrt(w), rcond=None)[0]
    np.testing.assert_allclose(wls(F, y, w, list("abcd")), ref, rtol=1e-10)


def test_wls_names_collinear_column():
    rng = np.random.default_rng(2)
    x = rng.normal(size=30)
    F = np.column_stack([np.ones(30), x, 2 * x])
    with pytest.raises(SingularDesign) as e:
        wls(F, rng.normal(size=30), np.ones(30), ["const", "x", "x_twice"])
    assert set(e.value.columns) <= {"x", "x_twice"} and len(e.value.columns) == 1


def test_weighted_logit_matches_direct_optimization():
    rng = np.random.default_rng(3)
    F = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
    y = (rng.uniform(size=200) < expit(F @ [0.2, 1.0, -0.5])).astype(float)
    w = rng.exponential(size=200)

    def nll(b):
        eta = F @ b
        return -np.sum(w * (y * eta - np.logaddexp(0, eta)))

    ref = optimize.minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    beta, ok = weighted_logit(F, y, w)
    assert ok
    np.testing.assert_allclose(beta, ref, atol=1e-5)


def test_trend_recovers_linear_truth():
    s = _slice(n1=300, n0=300)
    mu0 = fit_trend(s, "control", "ols")
    np.testing.assert_allclose(mu0.coef, [1.0, 2.0, -1.0], atol=0.3)
    mu1 = fit_trend(s, "treated", "ols")
    assert mu1.terms == ("(intercept)", "x1", "x2", "d1")
    assert mu1.coef[-1] == pytest.approx(3.0, abs=0.3)


def test_trend_uses_only_target_rows():
    s = _slice()
    base = fit_trend(s, "control").coef
    y1 = s.y1.copy()
    y1[s.treated] += 1e6
    other = MatchedPeriodSlice(**{**s.__dict__, "y1": y1})
    np.testing.assert_array_equal(fit_trend(other, "control").coef, base)


def test_mean_over_x_matches_loop():
    s = _slice()
    mu1 = fit_trend(s, "treated", "ols_interact")
    X, _ = s.d_features()
    w = np.random.default_rng(4).exponential(size=len(X))
    fast = mu1.mean_over_x(X, w, s.dose)
    slow = [w @ mu1.predict(X, np.repeat(s.dose[i:i + 1], len(X), 0)) / w.sum()
            for i in range(len(X))]
    np.testing.assert_allclose(fast, slow, rtol=1e-12)
    fast_d = mu1.mean_over_d(X, s.dose, w)
    slow_d = [w @ mu1.predict(np.repeat(X[i:i + 1], len(X), 0), s.dose) / w.sum()
              for i in range(len(X))]
    np.testing.assert_allclose(fast_d, slow_d, rtol=1e-12)


def test_learner_exclusion():
    s = _slice()
    m = fit_trend(s, "treated", LearnerSpec("ols", ("x1",)))
    assert "x1" not in m.terms
    assert fit_trend(s, "treated", {"id": "ols", "exclude": ["*"]}).terms == ("(intercept)", "d1")


def test_unknown_learner():
    with pytest.raises(UnknownLearner):
        fit_propensity(_slice(), "forest")


def test_propensity_clipped_and_separation_warns():
    s = _slice()
    x = s.x.copy()
    x[:, 0] = np.where(s.treated, 5.0, -5.0) + np.linspace(0, 0.1, s.n)
    sep = MatchedPeriodSlice(**{**s.__dict__, "x": x})
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        model = fit_propensity(sep, "logit")
    assert any(issubclass(r.category, PerfectSeparation) for r in rec)
    assert model.separation
    p = model.predict(sep.x)
    assert p.min() >= EPS_PROPENSITY and p.max() <= 1 - EPS_PROPENSITY


def test_marginal_propensity_is_constant():
    s = _slice(n1=30, n0=90)
    p = fit_propensity(s, "marginal").predict(s.x)
    np.testing.assert_allclose(p, 0.25, rtol=1e-8)


def test_density_integrates_to_one_and_marginal_is_pool_mean():
    s = _slice()
    dens = fit_dose_density(s)
    X, _ = s.d_features()
    grid = np.linspace(-5, 12, 4001)
    for x in X[:3]:
        vals = dens.density(np.repeat(x[None], len(grid), 0), grid, floored=False)
        assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-6)
    cross = dens.cross_density(s.dose)
    np.testing.assert_allclose(dens.marginal(s.dose), cross.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(np.diag(cross), dens.density(X, s.dose), rtol=1e-12)


def test_density_two_dimensional_factorization():
    rng = np.random.default_rng(5)
    n1 = 400
    x = rng.normal(size=(n1, 2))
    d1 = 1 + x[:, 0] + rng.normal(size=n1)
    d2 = 2 + 0.5 * d1 - x[:, 1] + 0.5 * rng.normal(size=n1)
    s = _slice(n1=n1, n0=50, q=2, dose=np.column_stack([d1, d2]))
    s = MatchedPeriodSlice(**{**s.__dict__, "x": np.vstack([x, rng.normal(size=(50, 2))])})
    dens = fit_dose_density(s)
    assert dens.dim == 2
    X, _ = s.d_features()
    expected = (stats.norm.pdf(d1, 1 + x[:, 0], 1) * stats.norm.pdf(d2, 2 + 0.5 * d1 - x[:, 1], 0.5))
    got = dens.density(X, s.dose)
    assert np.median(np.abs(np.log(got / expected))) < 0.1


def test_density_needs_rows():
    with pytest.raises(InsufficientRows):
        fit_dose_density(_slice(n1=10))


def test_positivity_report(one_period_sim):
    panel, _ = one_period_sim
    dose, spec = assemble_dose(panel, "border")
    s = attach_dose(slice_matched_period(panel, 1), dose, spec)
    models = fit_nuisances(s)
    rep = positivity_diagnostic(models.pi_d, s)
    assert 0 <= rep.fraction_floored <= 1
    assert rep.ratio_quantiles["min"] > 0
    assert not rep.flagged


def test_weights_zero_drop_rows():
    s = _slice()
    w = np.ones(s.n)
    w[:5] = 0.0
    keep = np.ones(s.n, bool)
    keep[:5] = False
    sub = MatchedPeriodSlice(s.period, s.unit_ids[keep], s.group[keep], s.y0[keep], s.y1[keep],
                             s.x[keep], s.x_names).with_dose(s.dose[5:], s.dose_names)
    np.testing.assert_allclose(fit_trend(s, "treated", weights=w).coef,
                               fit_trend(sub, "treated").coef, rtol=1e-10)
    np.testing.assert_allclose(fit_propensity(s, weights=w).coef, fit_propensity(sub).coef,
                               rtol=1e-8)
