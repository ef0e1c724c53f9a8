"""Synthetic panels with known effects, the robustness experiment and a naive oracle.

The default data-generating process:

* covariates ``X = (x1, x2, x3)`` are Gaussian with equicorrelation ``rho``;
  treated units have mean ``treated_shift`` and controls mean zero, so the
  true propensity is exactly logistic-linear (group sizes are fixed);
* the dose among treated units is ``d0 + gamma'(X - mu_1) + sd * e``
  (Gaussian law) or a Gaussian copula onto ``Uniform(lo, hi)``;
* every treated store sits in its own zip at the dose distance from a single
  non-taxed border zip, so the border distance recomputed from centroids
  is the drawn dose;
* the outcome change is ``g0(X) + season_m`` for controls and
  ``g0(X) + season_m + curve(D) + c (x1 - mu_1x1) D + shift_m`` for treated.

Since ``E[x1 - mu_1x1 | A=1] = 0`` the true ADT is ``curve + shift_m``; the
interaction term makes ATT differ from ADUTT by ``c Cov(x1, D | A=1)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .errors import InvalidSpec
from .estimators import tau_from_values, xi_from_values
from .exposure import DriverKind, assemble_dose, attach_dose
from .nuisance import LearnerSpec, fit_dose_density, fit_propensity, fit_trend
from .panel import NeighborhoodGraph, PanelDataset, slice_matched_period

EARTH_RADIUS_MILES = 3958.8
BORDER_ZIP = "Z000"
COVARIATES = ("x1", "x2", "x3")
CURVES = ("affine", "flat", "saturating")
DOSE_LAWS = ("gaussian", "uniform")
MIN_DOSE = 0.05


@dataclass(frozen=True)
class DgpSpec:
    n_treated: int = 140
    n_control: int = 123
    n_periods: int = 13
    n_auxiliary: int = 32
    covariate_corr: float = 0.3
    treated_shift: tuple[float, ...] = (0.8, 0.4, 0.0)
    trend_intercept: float = -10.0
    trend_coef: tuple[float, ...] = (4.0, 2.0, 1.0)
    driver: str = "border"
    dose_law: str = "gaussian"
    dose_mean: float = 3.75
    dose_confounding: tuple[float, ...] = (0.6, 0.0, 0.0)
    dose_noise: float = 0.8
    dose_range: tuple[float, float] = (0.0, 5.0)
    curve: str = "affine"
    curve_intercept: float = -10.0
    curve_slope: tuple[float, ...] = (-4.0,)
    curve_scale: float = 2.0
    heterogeneity: float = 25.0 / 6.0
    period_shift: tuple[float, ...] | None = None
    season_amplitude: float = 1.0
    noise_sd: float = 2.0
    unit_sd: float = 5.0
    pre_trend: float = 0.0
    anticipation: float = 0.0
    interference: float = 0.0
    neighbors_k: int = 2
    border_radius: float = 1.5
    seed: int = 0

    def __post_init__(self):
        for name in ("treated_shift", "trend_coef", "dose_confounding", "curve_slope",
                     "dose_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.period_shift is not None:
            object.__setattr__(self, "period_shift", tuple(float(v) for v in self.period_shift))
        self.validate()

    def validate(self) -> None:
        K = len(COVARIATES)
        if self.n_treated < 5:
            raise InvalidSpec("n_treated", "need at least 5 treated units")
        if self.n_control < 5:
            raise InvalidSpec("n_control", "need at least 5 control units")
        if self.n_periods < 1:
            raise InvalidSpec("n_periods", "must be positive")
        if self.n_auxiliary < 0:
            raise InvalidSpec("n_auxiliary", "must be non-negative")
        if not -0.5 < self.covariate_corr < 1.0:
            raise InvalidSpec("covariate_corr", "equicorrelation must lie in (-0.5, 1)")
        for name in ("treated_shift", "trend_coef", "dose_confounding"):
            if len(getattr(self, name)) != K:
                raise InvalidSpec(name, f"needs {K} entries")
        try:
            kind = DriverKind.parse(self.driver)
        except ValueError:
            raise InvalidSpec("driver", f"unknown driver {self.driver!r}") from None
        q = 2 if kind is DriverKind.JOINT else 1
        if len(self.curve_slope) not in (1, q):
            raise InvalidSpec("curve_slope", f"needs 1 or {q} entries")
        if self.dose_law not in DOSE_LAWS:
            raise InvalidSpec("dose_law", f"must be one of {DOSE_LAWS}")
        if self.curve not in CURVES:
            raise InvalidSpec("curve", f"must be one of {CURVES}")
        if self.curve_scale <= 0:
            raise InvalidSpec("curve_scale", "must be positive")
        if self.dose_noise <= 0:
            raise InvalidSpec("dose_noise", "must be positive")
        lo, hi = self.dose_range
        if not 0 <= lo < hi:
            raise InvalidSpec("dose_range", "need 0 <= lo < hi")
        if self.dose_law == "gaussian" and self.dose_mean <= 0:
            raise InvalidSpec("dose_mean", "must be positive")
        if self.noise_sd < 0 or self.unit_sd < 0:
            raise InvalidSpec("noise_sd", "must be non-negative")
        if self.period_shift is not None and len(self.period_shift) != self.n_periods:
            raise InvalidSpec("period_shift", f"needs {self.n_periods} entries")
        if self.neighbors_k < 0:
            raise InvalidSpec("neighbors_k", "must be non-negative")
        if self.pre_trend and self.n_periods < 5:
            raise InvalidSpec("pre_trend", "placebo checks need at least 5 periods")

    @property
    def driver_kind(self) -> DriverKind:
        return DriverKind.parse(self.driver)

    @property
    def sigma(self) -> np.ndarray:
        K = len(COVARIATES)
        return np.full((K, K), self.covariate_corr) + (1 - self.covariate_corr) * np.eye(K)

    @property
    def dose_sd(self) -> float:
        g = np.array(self.dose_confounding)
        return float(np.sqrt(g @ self.sigma @ g + self.dose_noise ** 2))

    @property
    def shifts(self) -> np.ndarray:
        if self.period_shift is None:
            return np.zeros(self.n_periods)
        return np.array(self.period_shift)

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "DgpSpec":
        known = {f.name for f in fields(cls)}
        extra = set(mapping) - known
        if extra:
            raise InvalidSpec(sorted(extra)[0], "unknown field")
        return cls(**dict(mapping))

    def to_mapping(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


# -- curves and truth ------------------------------------------------------------------


def curve_values(spec: DgpSpec, delta) -> np.ndarray:
    """True dose curve (before period shifts) at each row of ``delta``."""
    d = np.asarray(delta, dtype=float)
    d = d[:, None] if d.ndim == 1 else d
    b = np.broadcast_to(np.array(spec.curve_slope), (d.shape[1],))
    if spec.curve == "flat":
        return np.full(len(d), spec.curve_intercept)
    if spec.curve == "affine":
        return spec.curve_intercept + d @ b
    k = spec.curve_scale
    return spec.curve_intercept + (k * (1 - np.exp(-d / k))) @ b


def _expected_curve_closed_form(spec: DgpSpec) -> float:
    b = spec.curve_slope[0]
    a = spec.curve_intercept
    if spec.curve == "flat":
        return a
    if spec.dose_law == "gaussian":
        mu, s = spec.dose_mean, spec.dose_sd
        if spec.curve == "affine":
            return a + b * mu
        k = spec.curve_scale
        return a + b * k * (1 - math.exp(-mu / k + s * s / (2 * k * k)))
    lo, hi = spec.dose_range
    if spec.curve == "affine":
        return a + b * (lo + hi) / 2
    k = spec.curve_scale
    return a + b * k * (1 - k * (math.exp(-lo / k) - math.exp(-hi / k)) / (hi - lo))


def expected_curve_quadrature(spec: DgpSpec, nodes: int = 1_000_000) -> float:
    """``E[curve(D) | A=1]`` by a midpoint rule over the dose law."""
    if spec.dose_law == "gaussian":
        mu, s = spec.dose_mean, spec.dose_sd
        lo, hi = mu - 12 * s, mu + 12 * s
        h = (hi - lo) / nodes
        x = lo + h * (np.arange(nodes) + 0.5)
        return float(np.sum(curve_values(spec, x) * stats.norm.pdf(x, mu, s)) * h)
    lo, hi = spec.dose_range
    h = (hi - lo) / nodes
    x = lo + h * (np.arange(nodes) + 0.5)
    return float(np.mean(curve_values(spec, x)))


def _cov_x1_dose(spec: DgpSpec) -> float:
    g = np.array(spec.dose_confounding)
    cov_x1_lin = float((spec.sigma @ g)[0])
    if spec.dose_law == "gaussian":
        return cov_x1_lin
    # Gaussian copula: D = lo + (hi - lo) Phi(z), z standardized linear index
    lo, hi = spec.dose_range
    r = cov_x1_lin / spec.dose_sd  # Cov(x1, z) with Var(x1) = 1
    return (hi - lo) * r / (2 * math.sqrt(math.pi))


def dose_quantiles(spec: DgpSpec, q) -> np.ndarray:
    q = np.asarray(q, dtype=float) / 100.0
    if spec.dose_law == "gaussian":
        return stats.norm.ppf(q, spec.dose_mean, spec.dose_sd)
    lo, hi = spec.dose_range
    return lo + (hi - lo) * q


@dataclass(frozen=True)
class GroundTruth:
    """Population (or, for price-based drivers, sample-conditional) truth.

    ``att`` and ``adutt`` are per matched period; the headline values average
    them over a window.  ``adt`` evaluates the true curve for a period.
    """

    spec: DgpSpec
    att: np.ndarray
    adutt: np.ndarray
    method: str
    grid: tuple[np.ndarray, ...]
    adutt_quadrature: float | None = None
    doses: np.ndarray | None = None

    def headline(self, window: tuple[int, int] | None = None) -> dict[str, float]:
        M = len(self.att)
        lo, hi = window or ((4, M) if M >= 4 else (1, M))
        att = float(np.mean(self.att[lo - 1:hi]))
        adutt = float(np.mean(self.adutt[lo - 1:hi]))
        return {"att": att, "adutt": adutt, "reda": (att - adutt) / att if att else float("nan")}

    def adt(self, delta, period=None, window: tuple[int, int] | None = None) -> np.ndarray:
        base = curve_values(self.spec, delta)
        shifts = self.spec.shifts
        if period is not None:
            return base + shifts[period - 1]
        M = len(shifts)
        lo, hi = window or ((4, M) if M >= 4 else (1, M))
        return base + float(np.mean(shifts[lo - 1:hi]))

    @property
    def reda(self) -> float:
        return self.headline()["reda"]

    def placebo_slope(self, m_prime: int, base: int = 4) -> float:
        """Slope of the placebo ADT in the dose for pseudo-period ``m_prime``."""
        return self.spec.pre_trend * (m_prime - base)

    def rows(self, window=None):
        h = self.headline(window)
        out = [("headline", k, v) for k, v in h.items()]
        for m in range(len(self.att)):
            out += [(f"m{m + 1}", "att", float(self.att[m])),
                    (f"m{m + 1}", "adutt", float(self.adutt[m]))]
        out += [("meta", "method", self.method)]
        if self.adutt_quadrature is not None:
            out += [("meta", "adutt_quadrature", self.adutt_quadrature)]
        return out


# -- geography -------------------------------------------------------------------------------


def destination(lat, lon, bearing, miles):
    """Point at great-circle distance ``miles`` along ``bearing`` (radians) from (lat, lon)."""
    p1, l1 = np.radians(lat), np.radians(lon)
    a = np.asarray(miles) / EARTH_RADIUS_MILES
    p2 = np.arcsin(np.sin(p1) * np.cos(a) + np.cos(p1) * np.sin(a) * np.cos(bearing))
    l2 = l1 + np.arctan2(np.sin(bearing) * np.sin(a) * np.cos(p1),
                         np.cos(a) - np.sin(p1) * np.sin(p2))
    return np.degrees(p2), np.degrees(l2)


def _knn_edges(lat, lon, k) -> set[tuple[int, int]]:
    if k == 0 or len(lat) < 2:
        return set()
    xy = np.column_stack([lat * 69.0, lon * 69.0 * np.cos(np.radians(np.mean(lat)))])
    k_eff = min(k, len(lat) - 1)
    _, nn = cKDTree(xy).query(xy, k=k_eff + 1)
    edges = set()
    for i, row in enumerate(nn):
        for j in row[1:]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return edges


def _geography(spec: DgpSpec, dose_border: np.ndarray, rng):
    n1, n0 = spec.n_treated, spec.n_control
    bearing = rng.uniform(0, 2 * np.pi, n1)
    tlat, tlon = destination(0.0, 0.0, bearing, dose_border)
    clat = 30.0 + rng.uniform(0, 0.2, n0)
    clon = rng.uniform(0, 0.2, n0)
    tz = [f"T{i:05d}" for i in range(n1)]
    cz = [f"C{i:05d}" for i in range(n0)]
    adjacency = {z: set() for z in [BORDER_ZIP] + tz + cz}
    for names, la, lo in ((tz, tlat, tlon), (cz, clat, clon)):
        for i, j in _knn_edges(la, lo, spec.neighbors_k):
            adjacency[names[i]].add(names[j])
            adjacency[names[j]].add(names[i])
    for i in np.flatnonzero(dose_border <= spec.border_radius):
        adjacency[tz[i]].add(BORDER_ZIP)
        adjacency[BORDER_ZIP].add(tz[i])
    taxed = {BORDER_ZIP: False, **{z: True for z in tz}, **{z: False for z in cz}}
    centroids = {BORDER_ZIP: (0.0, 0.0)}
    centroids.update({z: (float(a), float(b)) for z, a, b in zip(tz, tlat, tlon)})
    centroids.update({z: (float(a), float(b)) for z, a, b in zip(cz, clat, clon)})
    graph = NeighborhoodGraph({z: frozenset(v) for z, v in adjacency.items()}, taxed, centroids)
    return graph, tz, cz


# -- generation -----------------------------------------------------------------------------


def _draw_dose(spec: DgpSpec, X1: np.ndarray, mu1: np.ndarray, rng) -> np.ndarray:
    g = np.array(spec.dose_confounding)
    lin = (X1 - mu1) @ g
    out = np.empty(len(X1))
    todo = np.arange(len(X1))
    while len(todo):
        e = rng.standard_normal(len(todo))
        if spec.dose_law == "gaussian":
            d = spec.dose_mean + lin[todo] + spec.dose_noise * e
        else:
            lo, hi = spec.dose_range
            z = (lin[todo] + spec.dose_noise * e) / spec.dose_sd
            d = lo + (hi - lo) * stats.norm.cdf(z)
        ok = d >= MIN_DOSE
        out[todo[ok]] = d[ok]
        todo = todo[~ok]
    return out


def _panel(spec, ids, group, zips, aux, outcomes, prices, X, graph) -> PanelDataset:
    M = spec.n_periods
    cov = np.repeat(X[:, None, :], M, axis=1)
    return PanelDataset(np.array(ids, dtype=object), group, np.array(zips, dtype=object), aux,
                        outcomes, prices, cov, COVARIATES, graph)


def generate(spec: DgpSpec) -> tuple[PanelDataset, GroundTruth]:
    """Draw one panel and its ground truth; identical specs give identical data."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n1, n0, na, M = spec.n_treated, spec.n_control, spec.n_auxiliary, spec.n_periods
    K = len(COVARIATES)
    mu1 = np.array(spec.treated_shift)
    chol = np.linalg.cholesky(spec.sigma)
    X1 = mu1 + rng.standard_normal((n1, K)) @ chol.T
    X0 = rng.standard_normal((n0, K)) @ chol.T
    d_border = _draw_dose(spec, X1, mu1, rng)
    graph, tz, cz = _geography(spec, d_border, rng)

    n = n1 + n0 + na
    X = np.vstack([X1, X0, np.zeros((na, K))])
    group = np.r_[np.ones(n1, int), np.zeros(n0 + na, int)]
    aux = np.r_[np.zeros(n1 + n0, bool), np.ones(na, bool)]
    ids = ([f"t{i:05d}" for i in range(n1)] + [f"c{i:05d}" for i in range(n0)]
           + [f"p{i:05d}" for i in range(na)])
    zips = tz + cz + [BORDER_ZIP] * na

    # prices in cents per ounce; the tax passes through partially to treated stores
    base_price = 40.0 + 1.5 * X[:, 1] + rng.normal(0, 1.0, n)
    base_price[n1 + n0:] = 38.0 + rng.normal(0, 1.0, na)
    passthrough = np.zeros(n)
    passthrough[:n1] = 1.5 + 0.3 * X1[:, 1] + rng.normal(0, 0.3, n1)
    prices = base_price[:, None, None] + rng.normal(0, 0.3, (n, 2, M))
    prices[:, 1, :] += passthrough[:, None]

    outcomes = np.zeros((n, 2, M))
    probe = _panel(spec, ids, group, zips, aux, outcomes, prices, X, graph)
    kind = spec.driver_kind
    if kind is DriverKind.BORDER:
        D = d_border[:, None]
    else:
        D = assemble_dose(probe, kind)[0].values

    effect = curve_values(spec, D) + spec.heterogeneity * (X1[:, 0] - mu1[0]) * D[:, 0]
    g0 = spec.trend_intercept + X @ np.array(spec.trend_coef)
    season = spec.season_amplitude * np.sin(2 * np.pi * np.arange(1, M + 1) / 12.0)
    level = 2.0 * np.cos(2 * np.pi * np.arange(1, M + 1) / 12.0)
    alpha = 50.0 + 5.0 * X[:, 0] + rng.normal(0, spec.unit_sd, n)
    eps = rng.normal(0, spec.noise_sd, (n, 2, M))
    shifts = spec.shifts
    Y = alpha[:, None, None] + level[None, None, :] + eps
    Y[:, 1, :] += g0[:, None] + season[None, :]
    Y[:n1, 1, :] += effect[:, None] + shifts[None, :]
    mgrid = np.arange(1, M + 1)
    if spec.pre_trend:
        for t in (0, 1):
            Y[:n1, t, :] += spec.pre_trend * d_border[:, None] * (M * t + mgrid)[None, :]
    if spec.anticipation:
        Y[:n1, 0, :] += spec.anticipation * effect[:, None] * (mgrid / M)[None, :]
    if spec.interference:
        spill = np.zeros(n1)
        pos = {z: i for i, z in enumerate(tz)}
        for i, z in enumerate(tz):
            nb = [pos[o] for o in graph.adjacency[z] if o in pos]
            if nb:
                spill[i] = np.mean(D[nb, 0]) - np.mean(D[:, 0])
        Y[:n1, 1, :] += spec.interference * spill[:, None]
    Y[n1 + n0:] = np.nan
    panel = _panel(spec, ids, group, zips, aux, Y, prices, X, graph)
    return panel, _truth(spec, D, X1, mu1)


def _truth(spec: DgpSpec, D, X1, mu1) -> GroundTruth:
    shifts = spec.shifts
    kind = spec.driver_kind
    if kind is DriverKind.BORDER:
        ec = _expected_curve_closed_form(spec)
        quad = expected_curve_quadrature(spec) if spec.curve == "saturating" else None
        att = ec + spec.heterogeneity * _cov_x1_dose(spec)
        grid = (dose_quantiles(spec, np.linspace(5, 95, 100)),)
        method = "closed_form"
    else:
        ec = float(np.mean(curve_values(spec, D)))
        att = float(np.mean(curve_values(spec, D)
                            + spec.heterogeneity * (X1[:, 0] - mu1[0]) * D[:, 0]))
        quad = None
        qlo, qhi = np.percentile(D, [5, 95], axis=0)
        grid = tuple(np.linspace(qlo[k], qhi[k], 100) for k in range(D.shape[1]))
        method = "sample"
    return GroundTruth(spec, att + shifts, ec + shifts, method, grid, quad, D)


# -- robustness experiment -------------------------------------------------------------------

# (mu1, pi_D, mu0, pi_A) good flags and expected (ATT, ADUTT) bias, in the published row order
TABLE1_ROWS: tuple[tuple[tuple[bool, bool, bool, bool], tuple[bool, bool]], ...] = (
    ((True, True, True, True), (False, False)),
    ((True, True, True, False), (False, False)),
    ((True, True, False, True), (False, False)),
    ((True, False, True, True), (False, False)),
    ((False, True, True, True), (False, False)),
    ((True, False, True, False), (False, False)),
    ((False, True, False, True), (False, False)),
    ((True, False, False, True), (False, False)),
    ((False, True, True, False), (False, False)),
    ((False, False, True, True), (False, True)),
    ((False, False, True, False), (False, True)),
    ((False, False, False, True), (False, True)),
    ((True, True, False, False), (True, True)),
    ((True, False, False, False), (True, True)),
    ((False, True, False, False), (True, True)),
    ((False, False, False, False), (True, True)),
)

GOOD_LEARNERS = {"treated_trend": "ols_interact", "control_trend": "ols",
                 "propensity": "logit", "density": "gaussian"}
BAD_LEARNERS = {"treated_trend": LearnerSpec("ols_interact", ("x1",)),
                "control_trend": LearnerSpec("ols", ("x1",)),
                "propensity": "marginal", "density": "marginal"}


def expected_verdicts(pattern) -> tuple[bool, bool]:
    """(ATT biased, ADUTT biased) implied by the robustness rules."""
    mu1, pid, mu0, pia = pattern
    a_ok = mu0 or pia
    return (not a_ok, not (a_ok and (mu1 or pid)))


@dataclass(frozen=True)
class RobustnessRow:
    pattern: tuple[bool, bool, bool, bool]
    att_bias: float
    att_se: float
    adutt_bias: float
    adutt_se: float
    expected: tuple[bool, bool]

    @property
    def att_biased(self) -> bool:
        return abs(self.att_bias) >= 3 * self.att_se

    @property
    def adutt_biased(self) -> bool:
        return abs(self.adutt_bias) >= 3 * self.adutt_se

    @property
    def agrees(self) -> bool:
        return (self.att_biased, self.adutt_biased) == self.expected

    def labels(self) -> tuple[str, ...]:
        g = lambda ok: "Good" if ok else "Bad"  # noqa: E731
        b = lambda biased: "Biased" if biased else "Unbiased"  # noqa: E731
        return tuple(g(p) for p in self.pattern) + (b(self.att_biased), b(self.adutt_biased))


def _replicate_table(spec: DgpSpec, seed: int, period: int):
    """ATT and ADUTT for all 16 learner combinations on one dataset."""
    panel, truth = generate(replace(spec, seed=seed))
    kind = spec.driver_kind
    dose, adj = assemble_dose(panel, kind)
    s = attach_dose(slice_matched_period(panel, period), dose, adj)
    t = s.treated
    w = np.ones(s.n)
    P = float(np.mean(t))
    Xd, _ = s.d_features()
    Dt = s.dose
    taus, xis = {}, {}
    for good_mu0 in (True, False):
        mu0 = fit_trend(s, "control", (GOOD_LEARNERS if good_mu0 else BAD_LEARNERS)["control_trend"])
        mu0v = mu0.predict(s.x)
        for good_pia in (True, False):
            pia = fit_propensity(s, (GOOD_LEARNERS if good_pia else BAD_LEARNERS)["propensity"])
            taus[good_mu0, good_pia] = tau_from_values(s.dy, s.group, mu0v, pia.predict(s.x), P)
    for good_mu1 in (True, False):
        mu1 = fit_trend(s, "treated",
                        (GOOD_LEARNERS if good_mu1 else BAD_LEARNERS)["treated_trend"])
        own = mu1.predict(Xd, Dt)
        m_d = mu1.mean_over_x(Xd, w[t], Dt)
        for good_pid in (True, False):
            dens = fit_dose_density(s, (GOOD_LEARNERS if good_pid else BAD_LEARNERS)["density"])
            xis[good_mu1, good_pid] = xi_from_values(s.dy[t], own, dens.density(Xd, Dt),
                                                     dens.marginal(Dt), m_d)
    a = t.astype(float)
    out = {}
    for (mu1g, pidg, mu0g, piag), _ in TABLE1_ROWS:
        tau = taus[mu0g, piag]
        xi_full = np.zeros(s.n)
        xi_full[t] = xis[mu1g, pidg]
        att = float(np.mean(a / P * s.dy - tau))
        adutt = float(np.mean(a / P * xi_full - tau))
        out[mu1g, pidg, mu0g, piag] = (att, adutt)
    return out, truth


def robustness_experiment(spec: DgpSpec, rows=None, reps: int = 200, period: int = 1,
                          seed: int | None = None, threads: int = 1) -> list[RobustnessRow]:
    """Monte Carlo bias of ATT and ADUTT for Good/Bad nuisance combinations.

    Good learners are the correctly specified baselines.  Bad outcome models
    drop ``x1``, the covariate driving both dose and trend; Bad propensity and
    density models ignore covariates.  Every dataset is analysed once per
    learner variant and the 16 combinations reuse those fits.
    """
    if reps < 2:
        raise InvalidSpec("reps", "need at least 2 replicates for a standard error")
    base_seed = spec.seed if seed is None else seed
    patterns = [p for p, _ in TABLE1_ROWS] if rows is None else [tuple(r) for r in rows]
    seeds = np.random.SeedSequence(base_seed).generate_state(reps)

    def one(r):
        return _replicate_table(spec, int(seeds[r]), period)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]
    out = []
    for p in patterns:
        att = np.array([res[p][0] - tr.att[period - 1] for res, tr in results])
        adutt = np.array([res[p][1] - tr.adutt[period - 1] for res, tr in results])
        out.append(RobustnessRow(p, float(att.mean()), float(att.std(ddof=1) / np.sqrt(reps)),
                                 float(adutt.mean()), float(adutt.std(ddof=1) / np.sqrt(reps)),
                                 expected_verdicts(p)))
    return out


# -- brute-force oracle ------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    tau: list
    xi: list
    att: float
    adutt: float
    m_d: list
    p_d: list


def brute_force_oracle(dy: Sequence, group: Sequence, mu0: Sequence, pi_a: Sequence,
                       mu1_cross, pi_d_cross) -> OracleResult:
    """Plain-loop transcription of the estimating equations.

    Inputs are literal nuisance values: ``mu0``/``pi_a`` per unit and, over
    treated units in order, ``mu1_cross[j][i] = mu1(X_j, D_i)`` and
    ``pi_d_cross[j][i] = pi(X_j, D_i)``.  Works with floats or Fractions;
    at most 8 units.
    """
    n = len(dy)
    if n > 8:
        raise ValueError("the oracle is meant for tiny panels (at most 8 units)")
    treated = [i for i in range(n) if group[i] == 1]
    n1 = len(treated)
    P = sum(1 for g in group if g == 1) / n if not hasattr(dy[0], "denominator") else \
        type(dy[0])(n1, n)
    tau = []
    for i in range(n):
        a = group[i]
        v = (1 - a) * pi_a[i] * (dy[i] - mu0[i]) / (P * (1 - pi_a[i])) + a * mu0[i] / P
        tau.append(v)
    m_d, p_d, xi = [], [], []
    for k in range(n1):
        m = 0
        p = 0
        for j in range(n1):
            m = m + mu1_cross[j][k]
            p = p + pi_d_cross[j][k]
        m = m / n1
        p = p / n1
        i = treated[k]
        xi.append((dy[i] - mu1_cross[k][k]) * p / pi_d_cross[k][k] + m)
        m_d.append(m)
        p_d.append(p)
    att = 0
    adutt = 0
    for i in range(n):
        a = group[i]
        att = att + a / P * dy[i] - tau[i]
        contrib = xi[treated.index(i)] if a == 1 else 0
        adutt = adutt + a / P * contrib - tau[i]
    return OracleResult(tau, xi, att / n, adutt / n, m_d, p_d)
