"""Nuisance models: outcome trends, treatment propensity, dose density.

Learners are looked up by string id in a small registry so that analysis
configs can swap them.  The baseline learners are

``ols`` / ``ols_interact``
    weighted least squares for outcome trends; ``ols_interact`` adds
    dose-by-covariate products to the treated-trend design.
``logit``
    weighted logistic regression for the propensity.
``gaussian``
    conditional Gaussian density, mean linear in the covariates.
``marginal``
    propensity or density that ignores the covariates.

Any learner accepts ``exclude`` (covariate names to leave out), which is how
deliberately misspecified models are built for the robustness experiments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import DegenerateDose, InsufficientRows, SingularDesign, UnknownLearner
from .panel import MatchedPeriodSlice

EPS_PROPENSITY = 0.01
DENSITY_FLOOR_REL = 1e-3
RIDGE_REL = 1e-4
MIN_DENSITY_ROWS = 20
_QUERY_CHUNK = 2048


class PerfectSeparation(UserWarning):
    """Raised as a warning; the propensity fit falls back to a ridge penalty."""


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    exclude: tuple[str, ...] = ()

    @classmethod
    def parse(cls, value) -> "LearnerSpec":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls(value)
        if isinstance(value, Mapping):
            extra = set(value) - {"id", "name", "exclude"}
            if extra:
                raise ValueError(f"unknown learner option {sorted(extra)[0]!r}")
            return cls(value.get("id", value.get("name")), tuple(value.get("exclude", ())))
        raise TypeError(f"cannot parse learner spec from {value!r}")

    def keep(self, names) -> list[int]:
        if "*" in self.exclude:
            return []
        return [k for k, n in enumerate(names) if n not in self.exclude]


def _check_weights(w, n):
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights are all zero")
    return w


def wls(F: np.ndarray, y: np.ndarray, w: np.ndarray, names, target="") -> np.ndarray:
    """Weighted least squares via pivoted QR; raises on rank deficiency."""
    sw = np.sqrt(w)
    A = F * sw[:, None]
    b = y * sw
    q, r, piv = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = (d[0] if d.size else 0.0) * 1e-10
    rank = int((d > tol).sum()) if d.size else 0
    if rank < F.shape[1]:
        raise SingularDesign([names[k] for k in piv[rank:]], target)
    beta = np.empty(F.shape[1])
    beta[piv] = linalg.solve_triangular(r, q.T @ b)
    return beta


def weighted_logit(F: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float = 0.0,
                   max_iter: int = 100, tol: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Newton-Raphson for the weighted logistic likelihood.

    The intercept (column 0) is never penalized.  Returns the coefficients
    and whether the iterations converged to finite fitted probabilities.
    """
    p_dim = F.shape[1]
    pen = np.full(p_dim, ridge)
    pen[0] = 0.0
    beta = np.zeros(p_dim)
    ybar = np.sum(w * y) / np.sum(w)
    if 0 < ybar < 1:
        beta[0] = np.log(ybar / (1 - ybar))
    for _ in range(max_iter):
        prob = expit(F @ beta)
        grad = F.T @ (w * (y - prob)) - pen * beta
        hess = (F * (w * prob * (1 - prob))[:, None]).T @ F + np.diag(pen)
        try:
            step = linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            return beta, False
        if not np.isfinite(step).all():
            return beta, False
        beta = beta + step
        if np.max(np.abs(step)) < tol * (1 + np.max(np.abs(beta))):
            eta = F @ beta
            return beta, bool(np.max(np.abs(eta)) < 30)
    return beta, False


# -- feature construction --------------------------------------------------------


def _design(X, x_names, keep, D=None, d_names=(), interact=False):
    cols = [np.ones(X.shape[0])]
    names = ["(intercept)"]
    for k in keep:
        cols.append(X[:, k])
        names.append(x_names[k])
    if D is not None:
        for j in range(D.shape[1]):
            cols.append(D[:, j])
            names.append(d_names[j])
        if interact:
            for j in range(D.shape[1]):
                for k in keep:
                    cols.append(D[:, j] * X[:, k])
                    names.append(f"{d_names[j]}:{x_names[k]}")
    return np.column_stack(cols), names


# -- outcome trends -----------------------------------------------------------------


@dataclass(frozen=True)
class TrendModel:
    """Fitted conditional mean of the outcome change.

    ``target`` is ``"treated"`` (a function of covariates and dose) or
    ``"control"`` (covariates only).  The linear designs are multilinear in
    covariates and dose, which makes averaging over either argument equal to
    evaluating at its (weighted) mean.
    """

    target: str
    learner: LearnerSpec
    x_names: tuple[str, ...]
    d_names: tuple[str, ...]
    keep: tuple[int, ...]
    interact: bool
    coef: np.ndarray
    terms: tuple[str, ...]
    period: int | None = None
    multilinear: bool = True

    def predict(self, X, D=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.target == "treated":
            D = np.asarray(D, dtype=float).reshape(X.shape[0], -1)
        else:
            D = None
        F, _ = _design(X, self.x_names, self.keep, D, self.d_names, self.interact)
        return F @ self.coef

    def mean_over_x(self, X, w, D) -> np.ndarray:
        """``m(d) = sum_j w_j mu(X_j, d) / sum_j w_j`` for each query dose row."""
        X = np.asarray(X, dtype=float)
        D = np.asarray(D, dtype=float).reshape(len(D), -1)
        if self.multilinear:
            xbar = (w @ X) / w.sum()
            return self.predict(np.repeat(xbar[None, :], len(D), axis=0), D)
        out = np.empty(len(D))
        for i in range(len(D)):
            out[i] = w @ self.predict(X, np.repeat(D[i:i + 1], len(X), axis=0)) / w.sum()
        return out

    def mean_over_d(self, X, Dpool, w) -> np.ndarray:
        """``sum_k w_k mu(X_i, D_k) / sum_k w_k`` for each covariate row."""
        X = np.asarray(X, dtype=float)
        Dpool = np.asarray(Dpool, dtype=float).reshape(len(Dpool), -1)
        if self.multilinear:
            dbar = (w @ Dpool) / w.sum()
            return self.predict(X, np.repeat(dbar[None, :], len(X), axis=0))
        out = np.empty(len(X))
        for i in range(len(X)):
            out[i] = w @ self.predict(np.repeat(X[i:i + 1], len(Dpool), axis=0), Dpool) / w.sum()
        return out

    def summary_rows(self):
        return [(f"trend_{self.target}", t, float(c)) for t, c in zip(self.terms, self.coef)]


def _fit_linear_trend(spec: LearnerSpec, target, X, x_names, D, d_names, y, w, period):
    interact = spec.name == "ols_interact" and D is not None
    keep = spec.keep(x_names)
    F, terms = _design(X, x_names, keep, D, d_names, interact)
    active = w > 0
    need = F.shape[1] + 2
    if active.sum() < need:
        raise InsufficientRows(int(active.sum()), need, f"{target} trend")
    coef = wls(F[active], y[active], w[active], terms, f"{target} trend")
    return TrendModel(target, spec, tuple(x_names), tuple(d_names), tuple(keep), interact,
                      coef, tuple(terms), period)


# -- propensity ----------------------------------------------------------------------


@dataclass(frozen=True)
class PropensityModel:
    learner: LearnerSpec
    x_names: tuple[str, ...]
    keep: tuple[int, ...]
    coef: np.ndarray
    terms: tuple[str, ...]
    separation: bool = False
    eps: float = EPS_PROPENSITY
    period: int | None = None

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        F, _ = _design(X, self.x_names, self.keep)
        return np.clip(expit(F @ self.coef), self.eps, 1 - self.eps)

    def summary_rows(self):
        return [("propensity", t, float(c)) for t, c in zip(self.terms, self.coef)]


def _fit_logit(spec: LearnerSpec, X, x_names, a, w, period):
    keep = [] if spec.name == "marginal" else spec.keep(x_names)
    F, terms = _design(X, x_names, keep)
    active = w > 0
    Fa, aa, wa = F[active], a[active].astype(float), w[active]
    if not (aa == 1).any() or not (aa == 0).any():
        raise InsufficientRows(0, 1, "propensity (one group empty)")
    beta, ok = weighted_logit(Fa, aa, wa)
    separation = False
    if not ok:
        separation = True
        lam = RIDGE_REL * wa.sum()
        warnings.warn(f"perfect separation in propensity fit; ridge fallback lambda={lam:g}",
                      PerfectSeparation, stacklevel=3)
        beta, _ = weighted_logit(Fa, aa, wa, ridge=lam, max_iter=500)
    return PropensityModel(spec, tuple(x_names), tuple(keep), beta, tuple(terms), separation,
                           period=period)


# -- dose density ----------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianFactor:
    """``p(d_k | X, d_1..d_{k-1})``: Normal with mean linear in X and earlier doses."""

    keep: tuple[int, ...]
    n_prev: int
    coef: np.ndarray
    sigma: float

    def _xpart(self, X):
        return self.coef[0] + X[:, list(self.keep)] @ self.coef[1:1 + len(self.keep)]

    def _dpart(self, D):
        if self.n_prev == 0:
            return np.zeros(len(D))
        return D[:, :self.n_prev] @ self.coef[1 + len(self.keep):]

    def pdf(self, X, D, k):
        z = (D[:, k] - self._xpart(X) - self._dpart(D)) / self.sigma
        return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * self.sigma)

    def cross_pdf(self, X, D, k):
        """Matrix ``[j, i] = p(D_i,k | X_j, D_i,<k)``."""
        mean = self._xpart(X)[:, None] + self._dpart(D)[None, :]
        z = (D[None, :, k] - mean) / self.sigma
        return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * self.sigma)


@dataclass(frozen=True)
class DoseDensityModel:
    """Conditional dose density among treated units.

    Two-dimensional doses are factored sequentially, ``p(d1|X) p(d2|d1, X)``.
    ``pool_x`` and ``pool_w`` are the treated covariates and weights that
    define the marginal ``p(d|A=1) = sum_j w_j pi(X_j, d) / sum_j w_j``.
    """

    learner: LearnerSpec
    x_names: tuple[str, ...]
    d_names: tuple[str, ...]
    factors: tuple[GaussianFactor, ...]
    pool_x: np.ndarray
    pool_w: np.ndarray
    floor: float = 0.0
    period: int | None = None

    @property
    def dim(self) -> int:
        return len(self.factors)

    def factor_densities(self, X, D) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        D = np.asarray(D, dtype=float).reshape(X.shape[0], -1)
        return np.column_stack([f.pdf(X, D, k) for k, f in enumerate(self.factors)])

    def density(self, X, D, floored: bool = True) -> np.ndarray:
        dens = np.prod(self.factor_densities(X, D), axis=1)
        return np.maximum(dens, self.floor) if floored else dens

    def cross_density(self, D, X=None, floored: bool = True) -> np.ndarray:
        """Matrix ``[j, i] = pi(X_j, D_i)`` over the covariate pool."""
        X = self.pool_x if X is None else np.asarray(X, dtype=float)
        D = np.asarray(D, dtype=float).reshape(len(D), -1)
        out = np.ones((len(X), len(D)))
        for k, f in enumerate(self.factors):
            out *= f.cross_pdf(X, D, k)
        return np.maximum(out, self.floor) if floored else out

    def marginal(self, D, floored: bool = True) -> np.ndarray:
        """Marginal treated dose density at each query dose."""
        D = np.asarray(D, dtype=float).reshape(len(D), -1)
        w = self.pool_w
        out = np.empty(len(D))
        for s in range(0, len(D), _QUERY_CHUNK):
            block = self.cross_density(D[s:s + _QUERY_CHUNK], floored=floored)
            out[s:s + _QUERY_CHUNK] = (w @ block) / w.sum()
        return out

    def summary_rows(self):
        rows = []
        for k, f in enumerate(self.factors):
            rows.append((f"density_{self.d_names[k]}", "sigma", float(f.sigma)))
            rows.extend((f"density_{self.d_names[k]}", f"coef_{i}", float(c))
                        for i, c in enumerate(f.coef))
        return rows


def _fit_gaussian_density(spec: LearnerSpec, X, x_names, D, d_names, w, period):
    n, q = D.shape
    active = w > 0
    if active.sum() < MIN_DENSITY_ROWS:
        raise InsufficientRows(int(active.sum()), MIN_DENSITY_ROWS, "dose density")
    for k in range(q):
        if np.ptp(D[active, k]) <= 0:
            raise DegenerateDose(f"{d_names[k]} has zero range among treated units")
    keep = [] if spec.name == "marginal" else spec.keep(x_names)
    factors = []
    for k in range(q):
        F, terms = _design(X, x_names, keep, D[:, :k] if k else None, d_names[:k])
        coef = wls(F[active], D[active, k], w[active], terms, f"density {d_names[k]}")
        resid = D[active, k] - F[active] @ coef
        var = float(np.sum(w[active] * resid ** 2) / np.sum(w[active]))
        scale = float(np.std(D[active, k]))
        if var <= (1e-10 * scale) ** 2:
            raise DegenerateDose(f"{d_names[k]} is a deterministic function of the covariates")
        factors.append(GaussianFactor(tuple(keep), k, coef, np.sqrt(var)))
    model = DoseDensityModel(spec, tuple(x_names), tuple(d_names), tuple(factors),
                             X[active], w[active], 0.0, period)
    peak = float(np.max(model.marginal(D[active], floored=False)))
    return DoseDensityModel(spec, tuple(x_names), tuple(d_names), tuple(factors),
                            X[active], w[active], DENSITY_FLOOR_REL * peak, period)


# -- registry ---------------------------------------------------------------------------

LEARNERS: dict[str, dict[str, Callable]] = {
    "trend": {"ols": _fit_linear_trend, "ols_interact": _fit_linear_trend},
    "propensity": {"logit": _fit_logit, "marginal": _fit_logit},
    "density": {"gaussian": _fit_gaussian_density, "marginal": _fit_gaussian_density},
}


def register_learner(kind: str, name: str, fit: Callable) -> None:
    """Add a learner.  ``fit`` must follow the signature of the baseline for ``kind``."""
    LEARNERS[kind][name] = fit


def _lookup(kind, spec):
    try:
        return LEARNERS[kind][spec.name]
    except KeyError:
        raise UnknownLearner(kind, spec.name) from None


# -- public fitting API ---------------------------------------------------------------------


def fit_trend(slice_: MatchedPeriodSlice, target: str, learner="ols", weights=None) -> TrendModel:
    """Fit ``E[dY | A=a, X(, D)]`` using only rows of the target group.

    ``target="control"`` uses base covariates; ``target="treated"`` uses base
    covariates, driver-specific extras and the dose.
    """
    spec = LearnerSpec.parse(learner)
    fit = _lookup("trend", spec)
    w = _check_weights(weights, slice_.n)
    if target == "control":
        rows = ~slice_.treated
        X, names = slice_.x[rows], slice_.x_names
        D, d_names = None, ()
    elif target == "treated":
        rows = slice_.treated
        if slice_.dose is None:
            raise ValueError("treated trend needs a dose; attach one first")
        X, names = slice_.d_features()
        D, d_names = slice_.dose, slice_.dose_names
    else:
        raise ValueError(f"target must be 'treated' or 'control', got {target!r}")
    if w[rows].sum() <= 0:
        raise ValueError(f"weights are all zero in the {target} group")
    return fit(spec, target, X, names, D, d_names, slice_.dy[rows], w[rows], slice_.period)


def fit_propensity(slice_: MatchedPeriodSlice, learner="logit", weights=None) -> PropensityModel:
    spec = LearnerSpec.parse(learner)
    fit = _lookup("propensity", spec)
    w = _check_weights(weights, slice_.n)
    return fit(spec, slice_.x, slice_.x_names, slice_.group, w, slice_.period)


def fit_dose_density(slice_: MatchedPeriodSlice, learner="gaussian", weights=None) -> DoseDensityModel:
    spec = LearnerSpec.parse(learner)
    fit = _lookup("density", spec)
    w = _check_weights(weights, slice_.n)
    if slice_.dose is None:
        raise ValueError("dose density needs a dose; attach one first")
    X, names = slice_.d_features()
    return fit(spec, X, names, slice_.dose, slice_.dose_names, w[slice_.treated], slice_.period)


@dataclass(frozen=True)
class PositivityReport:
    ratio_quantiles: dict[str, float]
    fraction_floored: float
    fraction_own_floored: float
    floor: float
    flagged: bool

    def rows(self):
        out = [("positivity", f"ratio_{k}", v) for k, v in self.ratio_quantiles.items()]
        out += [("positivity", "fraction_floored", self.fraction_floored),
                ("positivity", "fraction_own_floored", self.fraction_own_floored),
                ("positivity", "floor", self.floor),
                ("positivity", "flagged", float(self.flagged))]
        return out


def positivity_diagnostic(density: DoseDensityModel, slice_: MatchedPeriodSlice,
                          threshold: float = 0.05) -> PositivityReport:
    """Summarize the weight ratio ``p(D_i|A=1) / pi(X_i, D_i)`` and floor usage.

    ``fraction_floored`` counts, over all treated pairs ``(j, i)``, how often
    ``pi(X_j, D_i)`` falls below the floor.  These are exactly the evaluations
    entering the marginal density, so the fraction measures how much of the
    covariate-by-dose support lacks overlap.
    """
    X, _ = slice_.d_features()
    D = slice_.dose
    raw_own = density.density(X, D, floored=False)
    own = np.maximum(raw_own, density.floor)
    marg = density.marginal(D)
    ratio = marg / own
    floored = 0
    for s in range(0, len(D), _QUERY_CHUNK):
        floored += int((density.cross_density(D[s:s + _QUERY_CHUNK], X, floored=False)
                        < density.floor).sum())
    frac = floored / float(len(D) * len(X))
    qs = dict(zip(("min", "q05", "median", "q95", "max"),
                  np.quantile(ratio, [0, 0.05, 0.5, 0.95, 1.0]).tolist()))
    return PositivityReport(qs, frac, float(np.mean(raw_own < density.floor)),
                            density.floor, frac > threshold)


@dataclass(frozen=True)
class NuisanceModels:
    mu1: TrendModel
    mu0: TrendModel
    pi_a: PropensityModel
    pi_d: DoseDensityModel
    learners: Mapping[str, LearnerSpec] = field(default_factory=dict)
    period: int | None = None

    def summary_rows(self):
        return (self.mu1.summary_rows() + self.mu0.summary_rows()
                + self.pi_a.summary_rows() + self.pi_d.summary_rows())


DEFAULT_LEARNERS = {
    "treated_trend": LearnerSpec("ols_interact"),
    "control_trend": LearnerSpec("ols"),
    "propensity": LearnerSpec("logit"),
    "density": LearnerSpec("gaussian"),
}


def fit_nuisances(slice_: MatchedPeriodSlice, learners: Mapping | None = None,
                  weights=None) -> NuisanceModels:
    """Fit all four nuisance functions on one slice with common weights."""
    ls = dict(DEFAULT_LEARNERS)
    for k, v in (learners or {}).items():
        if k not in ls:
            raise ValueError(f"unknown nuisance role {k!r}")
        ls[k] = LearnerSpec.parse(v)
    return NuisanceModels(
        mu1=fit_trend(slice_, "treated", ls["treated_trend"], weights),
        mu0=fit_trend(slice_, "control", ls["control_trend"], weights),
        pi_a=fit_propensity(slice_, ls["propensity"], weights),
        pi_d=fit_dose_density(slice_, ls["density"], weights),
        learners=ls,
        period=slice_.period,
    )
