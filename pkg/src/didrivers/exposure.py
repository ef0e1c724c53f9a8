"""Driver doses and per-driver adjustment sets.

Three drivers are supported:

* ``BorderDistance`` -- great-circle miles from a store's zip centroid to the
  nearest non-taxed zip centroid.  Adjusts for within-city competition.
* ``Competition`` -- post-tax price minus the neighborhood minimum price.
  Adjusts for border distance and price change.
* ``JointPriceCompetition`` -- the pair (price change, post-tax competition).
  Adjusts for border distance and pre-tax competition.

Doses are defined for treated analytic units only and are returned in panel
order, which is also the order of treated rows in a matched-period slice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyNeighborhood, MissingCentroid, MissingPrice, NoUntaxedZip
from .panel import MatchedPeriodSlice, PanelDataset, great_circle_miles

# price windows: post-tax prices use the first three matched periods
POST_PRICE_PERIODS = 3


class DriverKind(str, enum.Enum):
    BORDER = "BorderDistance"
    COMPETITION = "Competition"
    JOINT = "JointPriceCompetition"

    @classmethod
    def parse(cls, value) -> "DriverKind":
        if isinstance(value, cls):
            return value
        aliases = {"border": cls.BORDER, "competition": cls.COMPETITION,
                   "joint": cls.JOINT, "price": cls.JOINT}
        key = str(value)
        for k in cls:
            if key == k.value:
                return k
        if key.lower() in aliases:
            return aliases[key.lower()]
        raise ValueError(f"unknown driver kind {value!r}")


@dataclass(frozen=True)
class DoseVector:
    kind: DriverKind
    unit_ids: np.ndarray
    values: np.ndarray  # (n_treated, q)
    names: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def support(self) -> np.ndarray:
        """(q, 2) array of empirical 5th and 95th percentiles per dimension."""
        return np.percentile(self.values, [5, 95], axis=0).T

    def shifted(self, c) -> "DoseVector":
        return DoseVector(self.kind, self.unit_ids, self.values + np.asarray(c, dtype=float), self.names)


@dataclass(frozen=True)
class AdjustmentSpec:
    """Covariates used by the nuisance models for one driver.

    ``base`` names panel covariates (used by all four nuisances); ``extra``
    names driver-specific adjustments that exist only for treated units and
    therefore enter the dose-side models (treated trend and dose density).
    """

    kind: DriverKind
    base: tuple[str, ...]
    extra: tuple[str, ...]
    extra_values: np.ndarray  # (n_treated, len(extra))

    def __post_init__(self):
        dose_names = {
            DriverKind.BORDER: {"border_distance"},
            DriverKind.COMPETITION: {"competition_post"},
            DriverKind.JOINT: {"price_change", "competition_post"},
        }[self.kind]
        clash = dose_names & set(self.extra)
        if clash:
            raise ValueError(f"driver {sorted(clash)} in its own adjustment set")

    @property
    def columns(self) -> tuple[str, ...]:
        return self.base + self.extra


def _treated_index(panel: PanelDataset) -> np.ndarray:
    return np.flatnonzero((panel.group == 1) & ~panel.auxiliary)


def zip_border_distance(panel: PanelDataset) -> dict[str, float]:
    """Distance in miles from every taxed zip to its nearest non-taxed zip."""
    g = panel.graph
    untaxed = [z for z in g.zips if not g.taxed[z]]
    if not untaxed:
        raise NoUntaxedZip()
    for z in untaxed:
        if z not in g.centroids:
            raise MissingCentroid(z)
    ulat = np.array([g.centroids[z][0] for z in untaxed])
    ulon = np.array([g.centroids[z][1] for z in untaxed])
    out = {}
    for z in sorted(set(panel.zip_ids[_treated_index(panel)].tolist())):
        if z not in g.centroids:
            raise MissingCentroid(z)
        lat, lon = g.centroids[z]
        out[z] = float(great_circle_miles(lat, lon, ulat, ulon).min())
    return out


def border_distance(panel: PanelDataset) -> DoseVector:
    idx = _treated_index(panel)
    by_zip = zip_border_distance(panel)
    vals = np.array([by_zip[z] for z in panel.zip_ids[idx]], dtype=float)
    return DoseVector(DriverKind.BORDER, panel.unit_ids[idx], vals[:, None], ("border_distance",))


def _post_periods(panel: PanelDataset) -> range:
    return range(1, min(POST_PRICE_PERIODS, panel.n_periods) + 1)


def _prices(panel: PanelDataset, i: int, t: int, periods) -> np.ndarray:
    vals = panel.prices[i, t, [m - 1 for m in periods]]
    bad = ~np.isfinite(vals)
    if bad.any():
        m = list(periods)[int(np.flatnonzero(bad)[0])]
        raise MissingPrice(panel.unit_ids[i], t, m)
    return vals


def price_change(panel: PanelDataset) -> np.ndarray:
    """Mean post price over m=1..3 minus mean pre price over m=1..M (cents/oz)."""
    idx = _treated_index(panel)
    post = _post_periods(panel)
    pre = range(1, panel.n_periods + 1)
    return np.array([_prices(panel, i, 1, post).mean() - _prices(panel, i, 0, pre).mean()
                     for i in idx])


def price_competition(panel: PanelDataset, t: int, within_treated_only: bool = False) -> np.ndarray:
    """Own mean price over m=1..3 minus the neighborhood minimum over (j, m).

    The minimum runs over every observed price of every other store in the
    neighborhood (own zip plus adjacent zips) across the same periods, per the
    literal min over ``j`` and ``m``.  Stores without a price for those
    periods are skipped.  Negative values are kept.
    """
    idx = _treated_index(panel)
    periods = _post_periods(panel)
    cols = [m - 1 for m in periods]
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        own = _prices(panel, i, t, periods).mean()
        nbrs = panel.neighborhood_units(i, taxed_only=within_treated_only)
        vals = panel.prices[nbrs][:, t, cols] if len(nbrs) else np.empty((0,))
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise EmptyNeighborhood(panel.unit_ids[i])
        out[k] = own - vals.min()
    return out


def assemble_dose(panel: PanelDataset, kind) -> tuple[DoseVector, AdjustmentSpec]:
    kind = DriverKind.parse(kind)
    idx = _treated_index(panel)
    ids = panel.unit_ids[idx]
    base = panel.covariate_names
    if kind is DriverKind.BORDER:
        dose = border_distance(panel)
        extra = ("competition_within",)
        vals = price_competition(panel, 1, within_treated_only=True)[:, None]
    elif kind is DriverKind.COMPETITION:
        dose = DoseVector(kind, ids, price_competition(panel, 1)[:, None], ("competition_post",))
        extra = ("border_distance", "price_change")
        vals = np.column_stack([border_distance(panel).values[:, 0], price_change(panel)])
    else:
        dose = DoseVector(kind, ids,
                          np.column_stack([price_change(panel), price_competition(panel, 1)]),
                          ("price_change", "competition_post"))
        extra = ("border_distance", "competition_pre")
        vals = np.column_stack([border_distance(panel).values[:, 0], price_competition(panel, 0)])
    return dose, AdjustmentSpec(kind, base, extra, vals)


def attach_dose(slice_: MatchedPeriodSlice, dose: DoseVector,
                spec: AdjustmentSpec | None = None) -> MatchedPeriodSlice:
    treated_ids = slice_.unit_ids[slice_.treated]
    if not np.array_equal(treated_ids, dose.unit_ids):
        raise ValueError("dose units do not match the slice's treated units")
    if spec is None:
        return slice_.with_dose(dose.values, dose.names)
    return slice_.with_dose(dose.values, dose.names, spec.extra_values, spec.extra)


def write_dose_csv(dose: DoseVector, path, header=()) -> Path:
    path = Path(path)
    lines = [f"# {h}" for h in header]
    lines.append(",".join(["unit_id"] + [f"dose_{k + 1}" for k in range(dose.dim)]))
    for u, row in zip(dose.unit_ids.tolist(), dose.values):
        lines.append(",".join([str(u)] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
