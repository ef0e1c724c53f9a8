"""Influence-function estimators for ATT, ADT, ADUTT and REDA.

Per matched period the pipeline is

1. fit the four nuisances (:mod:`didrivers.nuisance`);
2. evaluate per-unit contributions ``tau_i`` (all units) and ``xi_i``
   (treated units), integrating over treated covariates with sample means;
3. smooth ``xi`` on the dose with a local linear regression;
4. combine::

       ATT    = mean(A/P * dY - tau)
       ADT(d) = theta(d) - mean(tau)
       ADUTT  = mean(A/P * xi - tau)
       REDA   = (ATT - ADUTT) / ATT

All means are weighted when observation weights are supplied (bootstrap),
and ``P`` is the (weighted) treated fraction.

``xi`` is coded as ``(dY - mu1(X, D)) * p(D|A=1) / pi(X, D) + m(D|A=1)``.
Writing ``m`` first inside the residual term, as in the influence-function
derivation, is the same expression.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import AttNearZero, DidriversError, GridOutsideSupport, PeriodFailure
from .exposure import DoseVector, DriverKind, assemble_dose, attach_dose
from .nuisance import DEFAULT_LEARNERS, NuisanceModels, PositivityReport, \
    fit_nuisances, positivity_diagnostic
from .panel import MatchedPeriodSlice, PanelDataset, slice_matched_period, slice_periods
from .smoothing import cv_bandwidth, local_linear, rule_of_thumb_bandwidth

ATT_FLOOR_REL = 1e-8


def wmean(v, w=None) -> float:
    v = np.asarray(v, dtype=float)
    if w is None:
        return float(np.mean(v))
    w = np.asarray(w, dtype=float)
    return float(np.sum(w * v) / np.sum(w))


# -- per-unit contributions -----------------------------------------------------------


def tau_from_values(dy, a, mu0, pi_a, p_treated) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return ((1 - a) * pi_a * (dy - mu0) / (p_treated * (1 - pi_a))
            + a * mu0 / p_treated)


def xi_from_values(dy, mu1_own, pi_d_own, p_d, m_d) -> np.ndarray:
    return (dy - mu1_own) * p_d / pi_d_own + m_d


@dataclass(frozen=True)
class EifComponents:
    """Per-unit pieces for one period.

    ``tau`` has one entry per analytic unit; the remaining arrays are indexed
    by treated unit (in slice order).  ``mu1_over_d`` holds the weighted mean
    over treated doses of ``mu1(X_i, D_k)`` and is used only by the
    influence-function diagnostics.
    """

    period: int | None
    group: np.ndarray
    dy: np.ndarray
    weights: np.ndarray
    p_treated: float
    mu0: np.ndarray
    pi_a: np.ndarray
    tau: np.ndarray
    dose: np.ndarray | None
    mu1_own: np.ndarray
    pi_d_own: np.ndarray
    p_d: np.ndarray
    m_d: np.ndarray
    xi: np.ndarray
    mu1_over_d: np.ndarray

    @property
    def treated(self) -> np.ndarray:
        return self.group == 1

    @property
    def w_treated(self) -> np.ndarray:
        return self.weights[self.treated]

    @property
    def clip_fraction(self) -> float:
        from .nuisance import EPS_PROPENSITY
        return float(np.mean((self.pi_a <= EPS_PROPENSITY) | (self.pi_a >= 1 - EPS_PROPENSITY)))


def _weights(w, n):
    return np.ones(n) if w is None else np.asarray(w, dtype=float)


def treated_fraction(group, w=None) -> float:
    return wmean(np.asarray(group) == 1, w)


def compute_tau(slice_: MatchedPeriodSlice, models: NuisanceModels, weights=None) -> np.ndarray:
    p = treated_fraction(slice_.group, weights)
    return tau_from_values(slice_.dy, slice_.group, models.mu0.predict(slice_.x),
                           models.pi_a.predict(slice_.x), p)


def compute_components(slice_: MatchedPeriodSlice, models: NuisanceModels,
                       weights=None) -> EifComponents:
    w = _weights(weights, slice_.n)
    t = slice_.treated
    wt = w[t]
    p = treated_fraction(slice_.group, w)
    mu0 = models.mu0.predict(slice_.x)
    pi_a = models.pi_a.predict(slice_.x)
    tau = tau_from_values(slice_.dy, slice_.group, mu0, pi_a, p)
    Xd, _ = slice_.d_features()
    D = slice_.dose
    mu1_own = models.mu1.predict(Xd, D)
    m_d = models.mu1.mean_over_x(Xd, wt, D)
    pi_own = models.pi_d.density(Xd, D)
    p_d = models.pi_d.marginal(D)
    xi = xi_from_values(slice_.dy[t], mu1_own, pi_own, p_d, m_d)
    mu1_over_d = models.mu1.mean_over_d(Xd, D, wt)
    return EifComponents(slice_.period, slice_.group, slice_.dy, w, p, mu0, pi_a, tau, D,
                         mu1_own, pi_own, p_d, m_d, xi, mu1_over_d)


def components_from_tables(dy, group, mu0, pi_a, mu1_cross, pi_d_cross, dose=None,
                           weights=None, period=None) -> EifComponents:
    """Build components from literal nuisance values.

    ``mu1_cross[j, i] = mu1(X_j, D_i)`` and ``pi_d_cross[j, i] = pi(X_j, D_i)``
    over treated units ``j, i``; the diagonals are the own evaluations.
    """
    dy = np.asarray(dy, dtype=float)
    group = np.asarray(group)
    w = _weights(weights, len(dy))
    t = group == 1
    wt = w[t]
    mu1_cross = np.asarray(mu1_cross, dtype=float)
    pi_d_cross = np.asarray(pi_d_cross, dtype=float)
    p = treated_fraction(group, w)
    mu0 = np.asarray(mu0, dtype=float)
    pi_a = np.asarray(pi_a, dtype=float)
    tau = tau_from_values(dy, group, mu0, pi_a, p)
    m_d = (wt @ mu1_cross) / wt.sum()
    p_d = (wt @ pi_d_cross) / wt.sum()
    mu1_own = np.diag(mu1_cross).copy()
    pi_own = np.diag(pi_d_cross).copy()
    xi = xi_from_values(dy[t], mu1_own, pi_own, p_d, m_d)
    mu1_over_d = (mu1_cross @ wt) / wt.sum()
    return EifComponents(period, group, dy, w, p, mu0, pi_a, tau, dose, mu1_own, pi_own,
                         p_d, m_d, xi, mu1_over_d)


def compute_xi(slice_: MatchedPeriodSlice, models: NuisanceModels, weights=None) -> np.ndarray:
    return compute_components(slice_, models, weights).xi


# -- scalar estimands -------------------------------------------------------------------


def estimate_att(comp: EifComponents) -> float:
    a = comp.group == 1
    return wmean(a / comp.p_treated * comp.dy - comp.tau, comp.weights)


def estimate_adutt(comp: EifComponents) -> float:
    xi_full = np.zeros(len(comp.group))
    xi_full[comp.treated] = comp.xi
    a = comp.group == 1
    return wmean(a / comp.p_treated * xi_full - comp.tau, comp.weights)


def estimate_reda(att: float, adutt: float, floor: float = ATT_FLOOR_REL) -> float:
    """``(ATT - ADUTT) / ATT``; raises :class:`AttNearZero` when ``|ATT| < floor``."""
    if not np.isfinite(att) or abs(att) < floor:
        raise AttNearZero(att, floor)
    return (att - adutt) / att


def reda_or_nan(att, adutt, floor=ATT_FLOOR_REL) -> float:
    try:
        return estimate_reda(att, adutt, floor)
    except AttNearZero:
        return float("nan")


# -- curves ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    size: int = 100
    quantiles: tuple[float, float] = (5.0, 95.0)
    axes: tuple | None = None  # explicit grid, one 1-D array per dose dimension
    bandwidth: object = "rule_of_thumb"  # or "cv" or explicit per-dimension values


@dataclass(frozen=True)
class EffectCurve:
    axes: tuple[np.ndarray, ...]
    values: np.ndarray  # flattened over the product grid, C order
    theta: np.ndarray
    tau_mean: float
    bandwidth: np.ndarray
    label: str = "adjusted"
    period: object = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    se: np.ndarray | None = None

    @property
    def points(self) -> np.ndarray:
        return grid_points(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def surface(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def with_bands(self, se, lower, upper) -> "EffectCurve":
        return replace(self, se=np.asarray(se), lower=np.asarray(lower), upper=np.asarray(upper))

    def slice_at_median(self, dim: int) -> tuple[np.ndarray, np.ndarray, dict]:
        """1-D cut along ``dim`` with other coordinates at their median grid index."""
        surf = self.surface()
        idx = [len(a) // 2 for a in self.axes]
        sel = tuple(slice(None) if k == dim else idx[k] for k in range(len(self.axes)))
        fixed = {k: float(self.axes[k][idx[k]]) for k in range(len(self.axes)) if k != dim}
        return self.axes[dim], surf[sel], fixed


def grid_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def make_grid(dose_values, config: GridConfig = GridConfig()) -> tuple[np.ndarray, ...]:
    D = np.asarray(dose_values, dtype=float)
    D = D[:, None] if D.ndim == 1 else D
    lo, hi = D.min(axis=0), D.max(axis=0)
    if config.axes is not None:
        axes = tuple(np.asarray(a, dtype=float) for a in config.axes)
        if len(axes) != D.shape[1]:
            raise ValueError(f"grid has {len(axes)} axes for a {D.shape[1]}-D dose")
        for k, a in enumerate(axes):
            if np.any(np.diff(a) <= 0):
                raise ValueError(f"grid axis {k} is not strictly increasing")
            if a.min() < lo[k] or a.max() > hi[k]:
                raise GridOutsideSupport(k, lo[k], hi[k], a.min(), a.max())
        return axes
    qlo, qhi = np.percentile(D, config.quantiles, axis=0)
    return tuple(np.linspace(qlo[k], qhi[k], config.size) for k in range(D.shape[1]))


def resolve_bandwidth(dose_values, y=None, policy="rule_of_thumb", w=None) -> np.ndarray:
    if isinstance(policy, str):
        if policy == "rule_of_thumb":
            return rule_of_thumb_bandwidth(dose_values, w)
        if policy == "cv":
            if y is None:
                raise ValueError("cross-validated bandwidth needs the smoothed values")
            return cv_bandwidth(dose_values, y, w)
        raise ValueError(f"unknown bandwidth policy {policy!r}")
    return np.atleast_1d(np.asarray(policy, dtype=float))


def curve_from_components(comp: EifComponents, axes, bandwidth, label="adjusted") -> EffectCurve:
    pts = grid_points(axes)
    theta = local_linear(comp.dose, comp.xi, pts, bandwidth, comp.w_treated)
    tau_mean = wmean(comp.tau, comp.weights)
    return EffectCurve(tuple(axes), theta - tau_mean, theta, tau_mean,
                       np.atleast_1d(bandwidth), label, comp.period)


def estimate_adt_curve(slice_: MatchedPeriodSlice, models: NuisanceModels,
                       dose: DoseVector | None = None, grid: GridConfig = GridConfig(),
                       weights=None, axes=None, bandwidth=None) -> EffectCurve:
    if dose is not None:
        slice_ = attach_dose(slice_, dose) if slice_.dose is None else slice_
    comp = compute_components(slice_, models, weights)
    if axes is None:
        axes = make_grid(slice_.dose, grid)
    if bandwidth is None:
        bandwidth = resolve_bandwidth(slice_.dose, comp.xi, grid.bandwidth, comp.w_treated)
    return curve_from_components(comp, axes, bandwidth)


def naive_curve(slice_: MatchedPeriodSlice, dose: DoseVector | None = None,
                grid: GridConfig = GridConfig(), weights=None, axes=None,
                bandwidth=None) -> EffectCurve:
    """Confounder-naive comparator.

    Local linear regression of ``dY`` on the dose among treated units, minus the
    mean ``dY`` among control units.
    """
    if dose is not None and slice_.dose is None:
        slice_ = attach_dose(slice_, dose)
    w = _weights(weights, slice_.n)
    t = slice_.treated
    D = slice_.dose
    if axes is None:
        axes = make_grid(D, grid)
    if bandwidth is None:
        bandwidth = resolve_bandwidth(D, slice_.dy[t], grid.bandwidth, w[t])
    theta = local_linear(D, slice_.dy[t], grid_points(axes), bandwidth, w[t])
    control_mean = wmean(slice_.dy[~t], w[~t])
    return EffectCurve(tuple(axes), theta - control_mean, theta, control_mean,
                       np.atleast_1d(bandwidth), "naive", slice_.period)


# -- influence-function diagnostics ---------------------------------------------------------


@dataclass(frozen=True)
class EifDiagnostics:
    phi_att: np.ndarray
    phi_adutt: np.ndarray
    j: np.ndarray
    mean_att: float
    mean_adutt: float
    se_att: float
    se_adutt: float
    mean_j: float

    def rows(self):
        return [("eif", "mean_phi_att", self.mean_att), ("eif", "mean_phi_adutt", self.mean_adutt),
                ("eif", "se_att", self.se_att), ("eif", "se_adutt", self.se_adutt),
                ("eif", "mean_j", self.mean_j)]


def compute_eif_diagnostics(comp: EifComponents, att: float | None = None,
                            adutt: float | None = None) -> EifDiagnostics:
    """Centered influence-function values per unit.

    ``att``/``adutt`` default to the point estimates, at which the sample
    means vanish by construction; pass known true values in simulation to get
    a non-trivial check.  Standard errors are ``sd(phi) / sqrt(n)``.
    """
    a = (comp.group == 1).astype(float)
    P = comp.p_treated
    w = comp.weights
    if att is None:
        att = estimate_att(comp)
    if adutt is None:
        adutt = estimate_adutt(comp)
    resid0 = comp.dy - comp.mu0
    phi_att = (a - comp.pi_a) / (P * (1 - comp.pi_a)) * resid0 - a / P * att
    wt = comp.w_treated
    mbar = np.sum(wt * comp.m_d) / wt.sum()
    j = np.zeros(len(a))
    j[comp.treated] = (comp.mu1_over_d - mbar) / P
    xi_full = np.zeros(len(a))
    xi_full[comp.treated] = comp.xi
    phi_adutt = a / P * xi_full - comp.tau + j - a / P * adutt
    n = len(a)

    def se(phi):
        mu = wmean(phi, w)
        return float(np.sqrt(wmean((phi - mu) ** 2, w) * n / (n - 1) / n))

    return EifDiagnostics(phi_att, phi_adutt, j, wmean(phi_att, w), wmean(phi_adutt, w),
                          se(phi_att), se(phi_adutt), wmean(j, w))


# -- multi-period analysis ------------------------------------------------------------------


@dataclass(frozen=True)
class EstimationConfig:
    learners: Mapping = field(default_factory=lambda: dict(DEFAULT_LEARNERS))
    window: tuple[int, int] | None = None
    grid: GridConfig = GridConfig()
    att_floor_rel: float = ATT_FLOOR_REL
    placebo_base: int = 4
    placebo_periods: tuple[int, ...] | None = None
    eif: bool = False

    def resolved_window(self, n_periods: int) -> tuple[int, int]:
        if self.window is not None:
            lo, hi = self.window
            if not 1 <= lo <= hi <= n_periods:
                raise ValueError(f"window {self.window} not inside 1..{n_periods}")
            return lo, hi
        return (4, n_periods) if n_periods >= 4 else (1, n_periods)


@dataclass(frozen=True)
class PeriodEstimate:
    period: object
    att: float
    adutt: float
    reda: float
    curve: EffectCurve
    positivity: PositivityReport | None = None
    eif: EifDiagnostics | None = None
    clip_fraction: float = 0.0


@dataclass(frozen=True)
class EffectEstimates:
    driver: DriverKind
    window: tuple[int, int]
    att: float
    adutt: float
    reda: float
    curve: EffectCurve
    periods: Mapping[object, PeriodEstimate]
    dose: DoseVector | None = None
    att_floor: float = 0.0

    def window_periods(self) -> list:
        lo, hi = self.window
        return [m for m in self.periods if lo <= m <= hi]


def analyze_slice(slice_: MatchedPeriodSlice, learners, axes, bandwidth, weights=None,
                  att_floor=ATT_FLOOR_REL, diagnostics=True, eif=False) -> PeriodEstimate:
    models = fit_nuisances(slice_, learners, weights)
    comp = compute_components(slice_, models, weights)
    att = estimate_att(comp)
    adutt = estimate_adutt(comp)
    curve = curve_from_components(comp, axes, bandwidth)
    pos = positivity_diagnostic(models.pi_d, slice_) if diagnostics else None
    diag = compute_eif_diagnostics(comp, att, adutt) if eif else None
    return PeriodEstimate(slice_.period, att, adutt, reda_or_nan(att, adutt, att_floor), curve,
                          pos, diag, comp.clip_fraction)


def _outcome_scale(panel: PanelDataset) -> float:
    y = panel.outcomes[panel.analytic]
    s = float(np.nanmean(np.abs(y)))
    return s if s > 0 else 1.0


def average_estimates(per: Sequence[PeriodEstimate], label="adjusted",
                      att_floor=ATT_FLOOR_REL) -> tuple[float, float, float, EffectCurve]:
    att = float(np.mean([p.att for p in per]))
    adutt = float(np.mean([p.adutt for p in per]))
    values = np.mean([p.curve.values for p in per], axis=0)
    theta = np.mean([p.curve.theta for p in per], axis=0)
    c0 = per[0].curve
    curve = EffectCurve(c0.axes, values, theta, float(np.mean([p.curve.tau_mean for p in per])),
                        c0.bandwidth, label, "average")
    return att, adutt, reda_or_nan(att, adutt, att_floor), curve


def prepare_driver(panel: PanelDataset, driver, config: EstimationConfig):
    """Dose, adjustment set, grid axes and bandwidth shared by every period."""
    kind = DriverKind.parse(driver)
    dose, spec = assemble_dose(panel, kind)
    axes = make_grid(dose.values, config.grid)
    if isinstance(config.grid.bandwidth, str) and config.grid.bandwidth == "cv":
        s = attach_dose(slice_matched_period(panel, panel.n_periods), dose, spec)
        bw = resolve_bandwidth(dose.values, s.dy[s.treated], "cv")
    else:
        bw = resolve_bandwidth(dose.values, None, config.grid.bandwidth)
    return kind, dose, spec, axes, bw


def run_period_analysis(panel: PanelDataset, driver, config: EstimationConfig = EstimationConfig(),
                        weights=None, prepared=None, periods=None,
                        diagnostics=True) -> EffectEstimates:
    """Estimate every matched period and average over the configured window.

    ``weights`` are per analytic unit and constant across periods.  The
    headline REDA is computed from the window-averaged ATT and ADUTT.
    """
    kind, dose, spec, axes, bw = prepared or prepare_driver(panel, driver, config)
    lo, hi = config.resolved_window(panel.n_periods)
    floor = config.att_floor_rel * _outcome_scale(panel)
    if periods is None:
        periods = range(1, panel.n_periods + 1)
    per = {}
    for m in periods:
        try:
            s = attach_dose(slice_matched_period(panel, m), dose, spec)
            per[m] = analyze_slice(s, config.learners, axes, bw, weights, floor,
                                   diagnostics=diagnostics, eif=config.eif)
        except DidriversError as exc:
            raise PeriodFailure(m, exc) from exc
    window = [per[m] for m in per if lo <= m <= hi]
    if not window:
        raise ValueError(f"no estimated periods inside window {lo}..{hi}")
    att, adutt, reda, curve = average_estimates(window, att_floor=floor)
    return EffectEstimates(kind, (lo, hi), att, adutt, reda, curve, per, dose, floor)


@dataclass(frozen=True)
class PlaceboResult:
    curves: Mapping[int, EffectCurve]
    average: EffectCurve
    base: int

    def slopes(self) -> dict[int, float]:
        """Least-squares slope of each 1-D placebo curve over its grid."""
        out = {}
        for m, c in self.curves.items():
            x = c.axes[0]
            out[m] = float(np.polyfit(x, c.values.reshape(c.shape)[(slice(None),) + (0,) * (len(c.axes) - 1)], 1)[0])
        return out


def placebo_curve(panel: PanelDataset, driver, config: EstimationConfig = EstimationConfig(),
                  weights=None, prepared=None) -> PlaceboResult:
    """ADT pipeline on pre-tax data: period ``base`` against each later period.

    Both outcomes come from ``t=0``; covariates are taken at the base period so
    that period-specific covariates never contain the placebo outcome itself.
    """
    kind, dose, spec, axes, bw = prepared or prepare_driver(panel, driver, config)
    base = config.placebo_base
    M = panel.n_periods
    targets = config.placebo_periods or tuple(range(base + 1, M + 1))
    curves = {}
    for mp in targets:
        try:
            s = slice_periods(panel, (0, base), (0, mp), covariate_period=base, label=mp,
                              placebo=True)
            s = attach_dose(s, dose, spec)
            est = analyze_slice(s, config.learners, axes, bw, weights, diagnostics=False)
        except DidriversError as exc:
            raise PeriodFailure(mp, exc) from exc
        curves[mp] = replace(est.curve, label="placebo")
    per = list(curves.values())
    avg = EffectCurve(per[0].axes, np.mean([c.values for c in per], axis=0),
                      np.mean([c.theta for c in per], axis=0),
                      float(np.mean([c.tau_mean for c in per])), per[0].bandwidth,
                      "placebo", "average")
    return PlaceboResult(curves, avg, base)


def naive_period_curves(panel: PanelDataset, driver, config: EstimationConfig = EstimationConfig(),
                        weights=None, prepared=None) -> EffectCurve:
    """Window-averaged naive curve on the same grid and bandwidth as the adjusted one."""
    kind, dose, spec, axes, bw = prepared or prepare_driver(panel, driver, config)
    lo, hi = config.resolved_window(panel.n_periods)
    curves = [naive_curve(attach_dose(slice_matched_period(panel, m), dose, spec),
                          weights=weights, axes=axes, bandwidth=bw)
              for m in range(lo, hi + 1)]
    return EffectCurve(curves[0].axes, np.mean([c.values for c in curves], axis=0),
                       np.mean([c.theta for c in curves], axis=0),
                       float(np.mean([c.tau_mean for c in curves])), curves[0].bandwidth,
                       "naive", "average")
