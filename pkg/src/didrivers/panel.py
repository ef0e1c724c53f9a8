"""Panel data model, neighborhood geography and CSV ingestion.

A panel holds, for every store, outcomes and prices indexed by tax period
``t`` (0 = pre, 1 = post) and matched period ``m`` (1..M).  Matched-period
slices pair ``(t=0, m)`` with ``(t=1, m)`` so seasonality cancels in the
outcome change.

Files
-----
``units.csv``
    Long format, one row per (unit, t, m).  Column names are taken from a
    :class:`Schema`.  An optional ``auxiliary`` column flags price-only stores
    that feed competition measures but never enter estimation.
``adjacency.csv``
    Rows ``zip_a,zip_b``.  Each row lists ``zip_b`` as a neighbor of
    ``zip_a``; by default every listing must be mirrored by the reverse row.
``zips.csv``
    Rows ``zip,taxed,lat,lon`` (centroid in degrees).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AsymmetricAdjacency,
    DuplicateUnitPeriod,
    InconsistentUnit,
    InvalidValue,
    MissingColumn,
    MissingOutcome,
    NonBinaryGroup,
    PeriodOutOfRange,
    UnknownZip,
)

EARTH_RADIUS_MILES = 3958.8


@dataclass(frozen=True)
class Schema:
    """Maps panel roles to column names in the input files."""

    unit_id: str = "unit_id"
    group: str = "group"
    zip: str = "zip"
    t: str = "t"
    m: str = "m"
    outcome: str = "outcome"
    price: str = "price"
    covariates: tuple[str, ...] = ()
    auxiliary: str = "auxiliary"
    zip_a: str = "zip_a"
    zip_b: str = "zip_b"
    taxed: str = "taxed"
    lat: str = "lat"
    lon: str = "lon"
    symmetrize_adjacency: bool = False

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "Schema":
        if not mapping:
            return cls()
        kw = dict(mapping)
        if "covariates" in kw:
            kw["covariates"] = tuple(kw["covariates"])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            from .errors import ConfigError

            raise ConfigError(f"schema.{sorted(unknown)[0]}", "unknown schema role")
        return cls(**kw)


@dataclass(frozen=True)
class UnitRecord:
    """One store, as a read-only view into a :class:`PanelDataset`."""

    unit_id: str
    group: int
    zip_id: str
    centroid: tuple[float, float]
    covariates: Mapping[str, np.ndarray]  # name -> (M,) values
    outcomes: np.ndarray  # (2, M), NaN where absent
    prices: np.ndarray  # (2, M), NaN where absent
    auxiliary: bool = False


@dataclass(frozen=True)
class NeighborhoodGraph:
    adjacency: Mapping[str, frozenset]
    taxed: Mapping[str, bool]
    centroids: Mapping[str, tuple[float, float]]
    zip_members: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for a, nbrs in self.adjacency.items():
            if a in nbrs:
                raise InvalidValue(f"zip {a!r} lists itself as a neighbor")
            for b in nbrs:
                if a not in self.adjacency.get(b, ()):
                    raise AsymmetricAdjacency(a, b)
        object.__setattr__(self, "adjacency", MappingProxyType(dict(self.adjacency)))
        object.__setattr__(self, "taxed", MappingProxyType(dict(self.taxed)))
        object.__setattr__(self, "centroids", MappingProxyType(dict(self.centroids)))
        object.__setattr__(self, "zip_members", MappingProxyType(dict(self.zip_members)))

    @property
    def zips(self) -> list[str]:
        return sorted(self.taxed)

    def neighbors(self, zip_id: str) -> frozenset:
        return self.adjacency.get(zip_id, frozenset())

    def neighborhood(self, zip_id: str, taxed_only: bool = False) -> frozenset:
        """Own zip plus adjacent zips; ``taxed_only`` drops non-taxed adjacent zips."""
        zs = {zip_id} | set(self.neighbors(zip_id))
        if taxed_only:
            zs = {z for z in zs if z == zip_id or self.taxed.get(z, False)}
        return frozenset(zs)


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Immutable unit-by-period panel.

    Arrays are indexed by unit position.  ``outcomes`` and ``prices`` have
    shape ``(n_units, 2, M)`` with ``[:, t, m-1]`` addressing period ``(t, m)``;
    ``covariates`` has shape ``(n_units, M, K)``.
    """

    unit_ids: np.ndarray
    group: np.ndarray
    zip_ids: np.ndarray
    auxiliary: np.ndarray
    outcomes: np.ndarray
    prices: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    graph: NeighborhoodGraph

    def __post_init__(self):
        n = len(self.unit_ids)
        uid = np.asarray(self.unit_ids, dtype=object)
        if len(set(uid.tolist())) != n:
            raise InvalidValue("unit_ids are not unique")
        group = np.asarray(self.group, dtype=np.int64)
        bad = ~np.isin(group, (0, 1))
        if bad.any():
            raise NonBinaryGroup(int(np.flatnonzero(bad)[0]), group[bad][0])
        aux = np.asarray(self.auxiliary, dtype=bool)
        outcomes = np.asarray(self.outcomes, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        cov = np.asarray(self.covariates, dtype=float)
        if outcomes.ndim != 3 or outcomes.shape[:2] != (n, 2):
            raise InvalidValue(f"outcomes must have shape (n, 2, M), got {outcomes.shape}")
        M = outcomes.shape[2]
        if prices.shape != outcomes.shape:
            raise InvalidValue("prices and outcomes shapes differ")
        if cov.shape[:2] != (n, M) or cov.shape[2] != len(self.covariate_names):
            raise InvalidValue(f"covariates must have shape (n, M, K), got {cov.shape}")
        analytic = ~aux
        if not ((group == 1) & analytic).any() or not ((group == 0) & analytic).any():
            raise InvalidValue("need at least one treated and one control analytic unit")
        if not np.isfinite(cov[analytic]).all():
            raise InvalidValue("analytic units have non-finite covariates")
        zips = np.asarray(self.zip_ids, dtype=object)
        for z in set(zips.tolist()):
            if z not in self.graph.taxed:
                raise UnknownZip(z, "units")
        members: dict[str, list[str]] = {}
        for u, z in zip(uid.tolist(), zips.tolist()):
            members.setdefault(z, []).append(u)
        graph = replace(self.graph, zip_members={z: tuple(v) for z, v in members.items()})
        object.__setattr__(self, "graph", graph)
        for name, arr in (("unit_ids", uid), ("group", group), ("zip_ids", zips),
                          ("auxiliary", aux), ("outcomes", outcomes),
                          ("prices", prices), ("covariates", cov)):
            object.__setattr__(self, name, _readonly(arr))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    # -- views ----------------------------------------------------------------

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[2]

    @property
    def analytic(self) -> np.ndarray:
        return ~self.auxiliary

    @property
    def analytic_index(self) -> np.ndarray:
        return np.flatnonzero(~self.auxiliary)

    @property
    def n_treated(self) -> int:
        return int(((self.group == 1) & ~self.auxiliary).sum())

    @property
    def n_control(self) -> int:
        return int(((self.group == 0) & ~self.auxiliary).sum())

    def index_of(self, unit_id) -> int:
        return self._index[unit_id]

    @property
    def _index(self) -> dict:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {u: i for i, u in enumerate(self.unit_ids.tolist())}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def unit(self, unit_id) -> UnitRecord:
        i = self.index_of(unit_id)
        z = self.zip_ids[i]
        return UnitRecord(
            unit_id=self.unit_ids[i],
            group=int(self.group[i]),
            zip_id=z,
            centroid=self.graph.centroids.get(z),
            covariates={k: self.covariates[i, :, j] for j, k in enumerate(self.covariate_names)},
            outcomes=self.outcomes[i],
            prices=self.prices[i],
            auxiliary=bool(self.auxiliary[i]),
        )

    def units(self):
        for u in self.unit_ids.tolist():
            yield self.unit(u)

    def neighborhood_units(self, i: int, taxed_only: bool = False) -> np.ndarray:
        """Positions of all units (auxiliary included) located in 𝒩(i), excluding i."""
        zs = self.graph.neighborhood(self.zip_ids[i], taxed_only=taxed_only)
        out = [self.index_of(u) for z in zs for u in self.graph.zip_members.get(z, ())]
        return np.array(sorted(j for j in out if j != i), dtype=np.int64)

    @classmethod
    def from_units(cls, units: Sequence[UnitRecord], graph: NeighborhoodGraph,
                   covariate_names: Sequence[str] | None = None) -> "PanelDataset":
        units = list(units)
        if covariate_names is None:
            covariate_names = list(units[0].covariates) if units else []
        M = np.asarray(units[0].outcomes).shape[1]
        cov = np.array([[np.asarray(u.covariates[k], dtype=float) for k in covariate_names]
                        for u in units]).transpose(0, 2, 1).reshape(len(units), M, len(covariate_names))
        return cls(
            unit_ids=np.array([u.unit_id for u in units], dtype=object),
            group=np.array([u.group for u in units]),
            zip_ids=np.array([u.zip_id for u in units], dtype=object),
            auxiliary=np.array([u.auxiliary for u in units], dtype=bool),
            outcomes=np.array([u.outcomes for u in units], dtype=float),
            prices=np.array([u.prices for u in units], dtype=float),
            covariates=cov,
            covariate_names=tuple(covariate_names),
            graph=graph,
        )


@dataclass(frozen=True)
class MatchedPeriodSlice:
    """Two-period view: one row per analytic unit.

    ``dose`` and ``extra`` are per-treated-unit arrays aligned with the treated
    rows in order (``group == 1``); they are attached by :mod:`didrivers.exposure`.
    """

    period: int
    unit_ids: np.ndarray
    group: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    x: np.ndarray
    x_names: tuple[str, ...]
    dose: np.ndarray | None = None
    dose_names: tuple[str, ...] = ()
    extra: np.ndarray | None = None
    extra_names: tuple[str, ...] = ()
    placebo: bool = False

    @property
    def dy(self) -> np.ndarray:
        return self.y1 - self.y0

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def treated(self) -> np.ndarray:
        return self.group == 1

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    def with_dose(self, dose, dose_names, extra=None, extra_names=()) -> "MatchedPeriodSlice":
        dose = np.asarray(dose, dtype=float)
        if dose.ndim == 1:
            dose = dose[:, None]
        if dose.shape[0] != self.n_treated:
            raise InvalidValue(f"dose has {dose.shape[0]} rows for {self.n_treated} treated units")
        if extra is None:
            extra = np.empty((self.n_treated, 0))
        extra = np.asarray(extra, dtype=float).reshape(self.n_treated, -1)
        return replace(self, dose=dose, dose_names=tuple(dose_names),
                       extra=extra, extra_names=tuple(extra_names))

    def d_features(self) -> tuple[np.ndarray, tuple[str, ...]]:
        """Treated-row adjustment matrix for dose-side nuisances: base X plus extras."""
        xt = self.x[self.treated]
        if self.extra is None or self.extra.shape[1] == 0:
            return xt, self.x_names
        return np.column_stack([xt, self.extra]), self.x_names + self.extra_names


def slice_periods(panel: PanelDataset, pre: tuple[int, int], post: tuple[int, int],
                  covariate_period: int, label: int | None = None,
                  placebo: bool = False) -> MatchedPeriodSlice:
    """General two-point slice; ``pre``/``post`` are ``(t, m)`` pairs."""
    M = panel.n_periods
    for _, m in (pre, post):
        if not 1 <= m <= M:
            raise PeriodOutOfRange(m, M)
    if not 1 <= covariate_period <= M:
        raise PeriodOutOfRange(covariate_period, M)
    idx = panel.analytic_index
    y0 = panel.outcomes[idx, pre[0], pre[1] - 1]
    y1 = panel.outcomes[idx, post[0], post[1] - 1]
    for (t, m), y in ((pre, y0), (post, y1)):
        bad = ~np.isfinite(y)
        if bad.any():
            raise MissingOutcome(panel.unit_ids[idx[np.flatnonzero(bad)[0]]], t, m)
    return MatchedPeriodSlice(
        period=post[1] if label is None else label,
        unit_ids=panel.unit_ids[idx],
        group=panel.group[idx],
        y0=y0.copy(),
        y1=y1.copy(),
        x=panel.covariates[idx, covariate_period - 1, :].copy(),
        x_names=panel.covariate_names,
        placebo=placebo,
    )


def slice_matched_period(panel: PanelDataset, m: int) -> MatchedPeriodSlice:
    """Pair ``(t=0, m)`` with ``(t=1, m)`` for every analytic unit."""
    return slice_periods(panel, (0, m), (1, m), covariate_period=m)


def great_circle_miles(lat1, lon1, lat2, lon2):
    """Haversine distance on a sphere of radius 3958.8 miles; inputs in degrees."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


# -- CSV I/O ------------------------------------------------------------------


def _require(df: pd.DataFrame, cols, table):
    for c in cols:
        if c not in df.columns:
            raise MissingColumn(c, table)


def _read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", comment="#")


def _to_float(series: pd.Series) -> np.ndarray:
    s = series.str.strip().replace({"": "nan", "NA": "nan", "NaN": "nan"})
    return np.array([float(v) for v in s], dtype=float)


def _to_int(series: pd.Series, column: str) -> np.ndarray:
    out = np.empty(len(series), dtype=np.int64)
    for row, v in enumerate(series):
        try:
            f = float(v)
        except ValueError:
            raise InvalidValue(f"units.csv row {row}: column {column!r} is not numeric: {v!r}")
        if not np.isfinite(f) or f != int(f):
            raise InvalidValue(f"units.csv row {row}: column {column!r} is not an integer: {v!r}")
        out[row] = int(f)
    return out


def read_graph(adjacency_csv, zips_csv, schema: Schema = Schema()) -> NeighborhoodGraph:
    zt = _read_csv(zips_csv)
    _require(zt, (schema.zip, schema.taxed), "zips.csv")
    taxed, centroids = {}, {}
    has_ll = schema.lat in zt.columns and schema.lon in zt.columns
    for row, rec in zt.iterrows():
        z = rec[schema.zip].strip()
        flag = rec[schema.taxed].strip()
        if flag not in ("0", "1"):
            raise InvalidValue(f"zips.csv row {row}: taxed must be 0 or 1, got {flag!r}")
        taxed[z] = flag == "1"
        if has_ll and rec[schema.lat].strip() and rec[schema.lon].strip():
            centroids[z] = (float(rec[schema.lat]), float(rec[schema.lon]))
    adj = _read_csv(adjacency_csv)
    _require(adj, (schema.zip_a, schema.zip_b), "adjacency.csv")
    listed: dict[tuple[str, str], int] = {}
    for row, rec in adj.iterrows():
        a, b = rec[schema.zip_a].strip(), rec[schema.zip_b].strip()
        for z in (a, b):
            if z not in taxed:
                raise UnknownZip(z, f"adjacency.csv row {row}")
        if a == b:
            raise InvalidValue(f"adjacency.csv row {row}: zip {a!r} adjacent to itself")
        listed.setdefault((a, b), row)
    adjacency: dict[str, set] = {z: set() for z in taxed}
    for (a, b), row in listed.items():
        if (b, a) not in listed and not schema.symmetrize_adjacency:
            raise AsymmetricAdjacency(a, b, row)
        adjacency[a].add(b)
        adjacency[b].add(a)
    return NeighborhoodGraph(
        adjacency={z: frozenset(v) for z, v in adjacency.items()},
        taxed=taxed,
        centroids=centroids,
    )


def ingest_panel(units_csv, adjacency_csv, schema: Schema | Mapping | None = None,
                 zips_csv=None) -> PanelDataset:
    """Read and validate a panel.

    ``zips_csv`` defaults to ``zips.csv`` next to ``adjacency_csv``.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    if zips_csv is None:
        zips_csv = Path(adjacency_csv).with_name("zips.csv")
    graph = read_graph(adjacency_csv, zips_csv, schema)

    df = _read_csv(units_csv)
    required = (schema.unit_id, schema.group, schema.zip, schema.t, schema.m, schema.outcome)
    if not schema.covariates:
        # unmapped columns are covariates
        roles = set(required) | {schema.price, schema.auxiliary}
        schema = replace(schema, covariates=tuple(c for c in df.columns if c not in roles))
    _require(df, required + tuple(schema.covariates), "units.csv")
    has_price = schema.price in df.columns
    has_aux = schema.auxiliary in df.columns

    uid = df[schema.unit_id].str.strip().to_numpy(dtype=object)
    zips = df[schema.zip].str.strip().to_numpy(dtype=object)
    t = _to_int(df[schema.t], schema.t)
    m = _to_int(df[schema.m], schema.m)
    y = _to_float(df[schema.outcome])
    price = _to_float(df[schema.price]) if has_price else np.full(len(df), np.nan)
    aux = np.zeros(len(df), dtype=bool)
    if has_aux:
        aux = np.array([v.strip() in ("1", "true", "True") for v in df[schema.auxiliary]])
    cov = np.column_stack([_to_float(df[c]) for c in schema.covariates]) if schema.covariates \
        else np.empty((len(df), 0))

    group = np.empty(len(df), dtype=np.int64)
    for row, v in enumerate(df[schema.group]):
        v = v.strip()
        if v not in ("0", "1", "0.0", "1.0"):
            raise NonBinaryGroup(row, v)
        group[row] = int(float(v))
    bad_t = ~np.isin(t, (0, 1))
    if bad_t.any():
        row = int(np.flatnonzero(bad_t)[0])
        raise InvalidValue(f"units.csv row {row}: t must be 0 or 1, got {t[row]}")
    if (m < 1).any():
        row = int(np.flatnonzero(m < 1)[0])
        raise PeriodOutOfRange(int(m[row]), int(m.max()))
    M = int(m.max())

    order: dict[str, int] = {}
    first_row: dict[str, int] = {}
    seen: dict[tuple, int] = {}
    for row, u in enumerate(uid):
        key = (u, int(t[row]), int(m[row]))
        if key in seen:
            raise DuplicateUnitPeriod(u, key[1], key[2], row)
        seen[key] = row
        if u not in order:
            order[u] = len(order)
            first_row[u] = row
        else:
            r0 = first_row[u]
            for name, arr in (("group", group), ("zip", zips), ("auxiliary", aux)):
                if arr[row] != arr[r0]:
                    raise InconsistentUnit(u, name, row)
        if zips[row] not in graph.taxed:
            raise UnknownZip(zips[row], f"units.csv row {row}")
        if not aux[row] and not np.isfinite(y[row]):
            raise MissingOutcome(u, int(t[row]), int(m[row]), row)
        if not aux[row] and cov.shape[1] and not np.isfinite(cov[row]).all():
            j = int(np.flatnonzero(~np.isfinite(cov[row]))[0])
            raise InvalidValue(f"units.csv row {row}: covariate {schema.covariates[j]!r} is not finite")

    n = len(order)
    K = len(schema.covariates)
    outcomes = np.full((n, 2, M), np.nan)
    prices = np.full((n, 2, M), np.nan)
    covariates = np.full((n, M, K), np.nan)
    rows_idx = np.array([order[u] for u in uid], dtype=np.int64)
    outcomes[rows_idx, t, m - 1] = y
    prices[rows_idx, t, m - 1] = price
    # covariates are X_im: take the t=0 row for period m, falling back to t=1
    for tt in (1, 0):
        sel = t == tt
        covariates[rows_idx[sel], m[sel] - 1, :] = cov[sel]
    unit_ids = np.array(list(order), dtype=object)
    first = np.array([first_row[u] for u in unit_ids], dtype=np.int64)
    return PanelDataset(
        unit_ids=unit_ids,
        group=group[first],
        zip_ids=zips[first],
        auxiliary=aux[first],
        outcomes=outcomes,
        prices=prices,
        covariates=covariates,
        covariate_names=tuple(schema.covariates),
        graph=graph,
    )


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_panel(panel: PanelDataset, directory, schema: Schema = Schema(),
                header: Sequence[str] = ()) -> dict[str, Path]:
    """Write ``units.csv``, ``adjacency.csv`` and ``zips.csv`` into ``directory``.

    Floats are written with ``repr`` so that ingesting the files reproduces
    every numeric field bit for bit.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cov_cols = schema.covariates or panel.covariate_names
    lines = [f"# {h}" for h in header]
    cols = [schema.unit_id, schema.group, schema.zip, schema.t, schema.m,
            schema.outcome, schema.price, schema.auxiliary, *cov_cols]
    lines.append(",".join(cols))
    M = panel.n_periods
    for i, u in enumerate(panel.unit_ids.tolist()):
        for t in (0, 1):
            for m in range(1, M + 1):
                y = panel.outcomes[i, t, m - 1]
                p = panel.prices[i, t, m - 1]
                if not np.isfinite(y) and not np.isfinite(p):
                    continue
                rec = [u, str(int(panel.group[i])), panel.zip_ids[i], str(t), str(m),
                       _fmt(y), _fmt(p), "1" if panel.auxiliary[i] else "0"]
                rec += [_fmt(v) for v in panel.covariates[i, m - 1, :]]
                lines.append(",".join(rec))
    paths = {"units": directory / "units.csv", "adjacency": directory / "adjacency.csv",
             "zips": directory / "zips.csv"}
    paths["units"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    g = panel.graph
    adj = [f"# {h}" for h in header] + [f"{schema.zip_a},{schema.zip_b}"]
    for a in g.zips:
        for b in sorted(g.adjacency.get(a, ())):
            adj.append(f"{a},{b}")
    paths["adjacency"].write_text("\n".join(adj) + "\n", encoding="utf-8")

    zl = [f"# {h}" for h in header] + [f"{schema.zip},{schema.taxed},{schema.lat},{schema.lon}"]
    for z in g.zips:
        lat, lon = g.centroids.get(z, (np.nan, np.nan))
        zl.append(f"{z},{int(g.taxed[z])},{_fmt(lat)},{_fmt(lon)}")
    paths["zips"].write_text("\n".join(zl) + "\n", encoding="utf-8")
    return paths
