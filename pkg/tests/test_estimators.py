from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didrivers.errors import AttNearZero, GridOutsideSupport, PeriodFailure
from didrivers.estimators import EstimationConfig, GridConfig, components_from_tables, \
    compute_components, compute_eif_diagnostics, compute_tau, estimate_adt_curve, \
    estimate_adutt, estimate_att, estimate_reda, make_grid, naive_curve, placebo_curve, \
    run_period_analysis, tau_from_values, xi_from_values
from didrivers.exposure import assemble_dose, attach_dose
from didrivers.nuisance import fit_nuisances
from didrivers.panel import slice_matched_period
from didrivers.simlab import DgpSpec, brute_force_oracle, generate


def _floats(xs):
    return np.array([float(v) for v in xs])


def _tables(six):
    i = six["inputs"]
    return (_floats(i["dy"]), np.array(i["group"]), _floats(i["mu0"]), _floats(i["pi_a"]),
            np.array([_floats(r) for r in i["mu1_cross"]]),
            np.array([_floats(r) for r in i["pi_d_cross"]]))


# -- hand oracle -----------------------------------------------------------------------------


def test_six_unit_components_match_frozen_values(six_unit):
    comp = components_from_tables(*_tables(six_unit))
    e = six_unit["expected"]
    np.testing.assert_allclose(comp.tau, _floats(e["tau"]), rtol=0, atol=1e-12)
    np.testing.assert_allclose(comp.xi, _floats(e["xi"]), rtol=0, atol=1e-12)
    np.testing.assert_allclose(comp.m_d, _floats(e["m_d"]), rtol=0, atol=1e-12)
    np.testing.assert_allclose(comp.p_d, _floats(e["p_d"]), rtol=0, atol=1e-12)
    assert estimate_att(comp) == pytest.approx(float(e["att"]), abs=1e-12)
    assert estimate_adutt(comp) == pytest.approx(float(e["adutt"]), abs=1e-12)


def test_six_unit_oracle_exact_in_rationals(six_unit):
    i = six_unit["inputs"]
    res = brute_force_oracle(i["dy"], i["group"], i["mu0"], i["pi_a"], i["mu1_cross"],
                             i["pi_d_cross"])
    e = six_unit["expected"]
    assert res.tau == e["tau"] and res.xi == e["xi"]
    assert res.att == e["att"] and res.adutt == e["adutt"]


def test_oracle_permutation_invariance(six_unit):
    i = six_unit["inputs"]
    perm = [5, 2, 1, 4, 0, 3]  # treated order becomes 2, 4, 0
    tperm = [1, 2, 0]
    res = brute_force_oracle([i["dy"][k] for k in perm], [i["group"][k] for k in perm],
                             [i["mu0"][k] for k in perm], [i["pi_a"][k] for k in perm],
                             [[i["mu1_cross"][a][b] for b in tperm] for a in tperm],
                             [[i["pi_d_cross"][a][b] for b in tperm] for a in tperm])
    e = six_unit["expected"]
    assert res.att == e["att"] and res.adutt == e["adutt"]
    assert res.xi == [e["xi"][k] for k in tperm]


def test_zero_residual_fixture():
    dy = [Fraction(v) for v in (4, 1, 6, 2)]
    group = [1, 0, 1, 0]
    mu0 = [Fraction(1), Fraction(1), Fraction(3), Fraction(2)]
    mu1 = [[Fraction(4), Fraction(5)], [Fraction(5), Fraction(6)]]
    pid = [[Fraction(1, 2), Fraction(1, 3)], [Fraction(1, 4), Fraction(1, 5)]]
    res = brute_force_oracle(dy, group, mu0, [Fraction(1, 2)] * 4, mu1, pid)
    m = [Fraction(9, 2), Fraction(11, 2)]
    assert res.xi == m
    # tau vanishes for controls, equals mu0/P for treated
    assert res.tau == [2, 0, 6, 0]
    assert res.att == (Fraction(4 + 6) * 2 - 8) / 4


# -- trivial cases --------------------------------------------------------------------------


def test_tau_trivial_cases():
    assert tau_from_values(np.array([0.0]), np.array([1]), 5.0, 0.3, 0.5)[0] == 10.0
    assert tau_from_values(np.array([2.5]), np.array([0]), 2.5, 0.3, 0.5)[0] == 0.0


def test_xi_trivial_cases():
    assert xi_from_values(3.0, 3.0, 0.2, 0.7, 1.5) == 1.5
    assert xi_from_values(4.0, 3.0, 0.5, 0.5, 1.5) == 2.5


def test_reda_values():
    assert estimate_reda(-22.5, -25.0) == pytest.approx(-0.1111, abs=5e-4)
    assert estimate_reda(-10.0, -10.0) == 0.0
    assert estimate_reda(-10.0, 0.0) == 1.0
    with pytest.raises(AttNearZero):
        estimate_reda(1e-12, 1.0)


@settings(max_examples=200, deadline=None)
@given(att=st.floats(-1e6, 1e6).filter(lambda v: abs(v) > 1e-6), adutt=st.floats(-1e6, 1e6))
def test_reda_identity(att, adutt):
    r = estimate_reda(att, adutt)
    assert r * att == pytest.approx(att - adutt, rel=1e-12, abs=1e-9)


def _flat_slice(n1=40, n0=40, treated_dy=-22.5, control_dy=0.0, seed=0):
    from didrivers.panel import MatchedPeriodSlice
    rng = np.random.default_rng(seed)
    n = n1 + n0
    group = np.r_[np.ones(n1, int), np.zeros(n0, int)]
    x = rng.normal(size=(n, 2))
    y0 = rng.normal(size=n)
    y1 = y0 + np.where(group == 1, treated_dy, control_dy)
    s = MatchedPeriodSlice(1, np.array([f"u{i}" for i in range(n)], dtype=object), group,
                           y0, y1, x, ("x1", "x2"))
    return s.with_dose(rng.uniform(0, 5, n1), ("d",))


def test_att_constant_effect():
    s = _flat_slice()
    comp = compute_components(s, fit_nuisances(s))
    assert estimate_att(comp) == pytest.approx(-22.5, abs=1e-9)
    assert estimate_adutt(comp) == pytest.approx(-22.5, abs=1e-9)


def test_att_no_effect():
    s = _flat_slice(treated_dy=3.0, control_dy=3.0)
    comp = compute_components(s, fit_nuisances(s))
    assert estimate_att(comp) == pytest.approx(0.0, abs=1e-9)


def test_att_identity_and_tau_finite(small_sim):
    panel, _ = small_sim
    dose, spec = assemble_dose(panel, "border")
    s = attach_dose(slice_matched_period(panel, 2), dose, spec)
    models = fit_nuisances(s)
    tau = compute_tau(s, models)
    assert np.isfinite(tau).all()
    P = s.treated.mean()
    assert estimate_att(compute_components(s, models)) == pytest.approx(
        np.mean(s.treated / P * s.dy - tau), rel=1e-13)


def test_adt_flat_when_xi_constant():
    s = _flat_slice()
    comp = compute_components(s, fit_nuisances(s))
    curve = estimate_adt_curve(s, fit_nuisances(s))
    np.testing.assert_allclose(curve.values, curve.values[0], atol=1e-8)
    assert len(curve.axes[0]) == 100
    assert np.all(np.diff(curve.axes[0]) > 0)
    assert curve.tau_mean == pytest.approx(np.mean(comp.tau))


def test_grid_bounds_and_explicit_axes():
    D = np.arange(101, dtype=float)
    (axis,) = make_grid(D)
    assert axis[0] == pytest.approx(5.0) and axis[-1] == pytest.approx(95.0)
    with pytest.raises(GridOutsideSupport):
        make_grid(D, GridConfig(axes=(np.array([-1.0, 50.0]),)))


def test_naive_constant_dy():
    s = _flat_slice(treated_dy=-5.0, control_dy=2.0)
    curve = naive_curve(s)
    np.testing.assert_allclose(curve.values, -7.0, atol=1e-9)
    assert curve.label == "naive"


def test_eif_means_vanish_at_estimates(small_sim):
    panel, _ = small_sim
    dose, spec = assemble_dose(panel, "border")
    s = attach_dose(slice_matched_period(panel, 1), dose, spec)
    comp = compute_components(s, fit_nuisances(s))
    diag = compute_eif_diagnostics(comp)
    assert abs(diag.mean_att) < 1e-10
    assert abs(diag.mean_adutt) < 1e-10
    assert abs(diag.mean_j) < 1e-10
    assert diag.se_att > 0 and diag.se_adutt > 0


def test_j_vanishes_when_mu1_ignores_covariates(six_unit):
    dy, group, mu0, pi_a, _, pid = _tables(six_unit)
    mu1 = np.tile([-18.0, -22.0, -15.0], (3, 1))  # mu1(x, d) = m(d) for every x
    comp = components_from_tables(dy, group, mu0, pi_a, mu1, pid)
    np.testing.assert_allclose(compute_eif_diagnostics(comp).j, 0.0, atol=1e-12)


# -- period analysis ---------------------------------------------------------------------------


def test_single_period_headline(one_period_sim):
    panel, _ = one_period_sim
    est = run_period_analysis(panel, "border")
    assert est.window == (1, 1)
    p = est.periods[1]
    assert (est.att, est.adutt) == (p.att, p.adutt)
    np.testing.assert_array_equal(est.curve.values, p.curve.values)


def test_headline_is_window_mean_and_ratio_of_averages(small_sim):
    panel, _ = small_sim
    est = run_period_analysis(panel, "border", EstimationConfig(window=(2, 5)))
    per = [est.periods[m] for m in range(2, 6)]
    assert est.att == pytest.approx(np.mean([p.att for p in per]), rel=1e-14)
    assert est.adutt == pytest.approx(np.mean([p.adutt for p in per]), rel=1e-14)
    assert est.reda * est.att == pytest.approx(est.att - est.adutt, rel=1e-12)
    np.testing.assert_allclose(est.curve.values, np.mean([p.curve.values for p in per], axis=0))
    for p in per:
        assert p.reda * p.att == pytest.approx(p.att - p.adutt, rel=1e-12)


def test_default_window(small_sim):
    panel, _ = small_sim
    assert run_period_analysis(panel, "border").window == (4, 5)


def test_period_failure_carries_index(small_sim):
    panel, _ = small_sim
    y = panel.outcomes.copy()
    y[0, 1, 2] = np.nan
    with pytest.raises(PeriodFailure) as e:
        run_period_analysis(replace(panel, outcomes=y), "border")
    assert e.value.m == 3


def test_placebo_self_period_is_zero(small_sim):
    panel, _ = small_sim
    pc = placebo_curve(panel, "border", EstimationConfig(placebo_periods=(4,)))
    np.testing.assert_array_equal(pc.curves[4].values, 0.0)


def test_dose_location_equivariance(one_period_sim):
    panel, _ = one_period_sim
    dose, spec = assemble_dose(panel, "border")
    base = attach_dose(slice_matched_period(panel, 1), dose, spec)
    shifted = attach_dose(slice_matched_period(panel, 1), dose.shifted(10.0), spec)
    c0 = estimate_adt_curve(base, fit_nuisances(base))
    c1 = estimate_adt_curve(shifted, fit_nuisances(shifted))
    np.testing.assert_allclose(c1.axes[0], c0.axes[0] + 10.0, rtol=1e-12)
    np.testing.assert_allclose(c1.values, c0.values, rtol=1e-8, atol=1e-8)
    for s0, s1 in ((base, shifted),):
        a0 = compute_components(s0, fit_nuisances(s0))
        a1 = compute_components(s1, fit_nuisances(s1))
        assert estimate_att(a1) == pytest.approx(estimate_att(a0), rel=1e-10)
        assert estimate_adutt(a1) == pytest.approx(estimate_adutt(a0), rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(scale=st.floats(0.1, 10.0), shift=st.floats(-5, 5))
def test_covariate_affine_invariance(one_period_sim, scale, shift):
    panel, _ = one_period_sim
    cov = panel.covariates.copy()
    cov[:, :, 1] = scale * cov[:, :, 1] + shift
    other = replace(panel, covariates=cov)
    a = run_period_analysis(panel, "border")
    b = run_period_analysis(other, "border")
    assert b.att == pytest.approx(a.att, rel=1e-7)
    assert b.adutt == pytest.approx(a.adutt, rel=1e-7)


def test_two_dimensional_dose_surface():
    panel, truth = generate(DgpSpec(driver="joint", n_periods=1, curve_slope=(-2.0, -1.0), seed=3))
    est = run_period_analysis(panel, "joint")
    assert est.curve.shape == (100, 100)
    x, vals, fixed = est.curve.slice_at_median(0)
    assert len(vals) == 100 and list(fixed) == [1]
    assert np.isfinite(est.curve.values).all()
