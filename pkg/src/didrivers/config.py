"""YAML analysis configuration.

Example::

    input:
      units: data/units.csv
      adjacency: data/adjacency.csv
      zips: data/zips.csv          # optional, defaults to a sibling of adjacency
      schema: {outcome: sales}     # optional column-name overrides
    drivers: [border, competition, joint]
    window: [4, 13]                # optional, defaults to 4..M
    learners:
      treated_trend: ols_interact
      control_trend: ols
      propensity: logit
      density: gaussian
    grid: {size: 100, quantiles: [5, 95], bandwidth: rule_of_thumb}
    bootstrap: {enabled: true, replicates: 1000, interval: normal, dump_replicates: false}
    seed: 0
    threads: 1
    output: results
    placebo: true
    naive: true
    eif: true

Relative input and output paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import yaml

from .errors import ConfigError, UnknownLearner
from .estimators import EstimationConfig, GridConfig
from .exposure import DriverKind
from .nuisance import DEFAULT_LEARNERS, LEARNERS, LearnerSpec
from .panel import Schema

_ROLE_KIND = {"treated_trend": "trend", "control_trend": "trend",
              "propensity": "propensity", "density": "density"}
_TOP = {"input", "driver", "drivers", "window", "learners", "grid", "bootstrap", "seed",
        "threads", "output", "placebo", "naive", "eif", "placebo_base"}


@dataclass(frozen=True)
class BootstrapConfig:
    enabled: bool = True
    replicates: int = 1000
    interval: str = "normal"
    dump_replicates: bool = False


@dataclass(frozen=True)
class AnalysisConfig:
    units: Path
    adjacency: Path
    zips: Path | None = None
    schema: Schema = Schema()
    drivers: tuple[DriverKind, ...] = (DriverKind.BORDER,)
    window: tuple[int, int] | None = None
    learners: Mapping[str, LearnerSpec] = field(default_factory=lambda: dict(DEFAULT_LEARNERS))
    grid: GridConfig = GridConfig()
    bootstrap: BootstrapConfig = BootstrapConfig()
    seed: int = 0
    threads: int = 1
    output: Path = Path("results")
    placebo: bool = False
    naive: bool = False
    eif: bool = False
    placebo_base: int = 4
    raw: Mapping = field(default_factory=dict, compare=False)

    def estimation(self) -> EstimationConfig:
        return EstimationConfig(learners=dict(self.learners), window=self.window, grid=self.grid,
                                placebo_base=self.placebo_base, eif=self.eif)

    def digest(self) -> str:
        """Stable hash of the effective configuration."""
        payload = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def canonical(self) -> dict:
        return {
            "units": str(self.units), "adjacency": str(self.adjacency),
            "zips": None if self.zips is None else str(self.zips),
            "schema": asdict(self.schema),
            "drivers": [d.value for d in self.drivers], "window": self.window,
            "learners": {k: [v.name, list(v.exclude)] for k, v in sorted(self.learners.items())},
            "grid": {"size": self.grid.size, "quantiles": list(self.grid.quantiles),
                     "axes": None if self.grid.axes is None else [list(a) for a in self.grid.axes],
                     "bandwidth": self.grid.bandwidth if isinstance(self.grid.bandwidth, str)
                     else list(self.grid.bandwidth)},
            "bootstrap": asdict(self.bootstrap), "seed": self.seed,
            "placebo": self.placebo, "naive": self.naive, "eif": self.eif,
            "placebo_base": self.placebo_base,
        }

    def with_overrides(self, seed=None, threads=None, output=None) -> "AnalysisConfig":
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads", "must be at least 1")
            kw["threads"] = int(threads)
        if output is not None:
            kw["output"] = Path(output)
        return replace(self, **kw)


def _require_mapping(value, name) -> dict:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(name, "expected a mapping")
    return dict(value)


def _bool(value, name) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(name, "expected true or false")
    return value


def _int(value, name, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, "expected an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(name, f"must be at least {minimum}")
    return value


def parse_learners(raw) -> dict[str, LearnerSpec]:
    out = dict(DEFAULT_LEARNERS)
    for role, value in _require_mapping(raw, "learners").items():
        if role not in _ROLE_KIND:
            raise ConfigError(f"learners.{role}", "unknown nuisance role")
        try:
            spec = LearnerSpec.parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"learners.{role}", str(exc)) from None
        if spec.name not in LEARNERS[_ROLE_KIND[role]]:
            raise ConfigError(f"learners.{role}", f"unknown learner id {spec.name!r}")
        out[role] = spec
    return out


def parse_grid(raw) -> GridConfig:
    g = _require_mapping(raw, "grid")
    unknown = set(g) - {"size", "quantiles", "axes", "bandwidth"}
    if unknown:
        raise ConfigError(f"grid.{sorted(unknown)[0]}", "unknown key")
    size = _int(g.get("size", 100), "grid.size", 2)
    q = tuple(float(v) for v in g.get("quantiles", (5, 95)))
    if len(q) != 2 or not 0 <= q[0] < q[1] <= 100:
        raise ConfigError("grid.quantiles", "need two increasing percentiles in [0, 100]")
    axes = g.get("axes")
    if axes is not None:
        if axes and not isinstance(axes[0], (list, tuple)):
            axes = [axes]
        axes = tuple(tuple(float(v) for v in a) for a in axes)
    bw = g.get("bandwidth", "rule_of_thumb")
    if isinstance(bw, str):
        if bw not in ("rule_of_thumb", "cv"):
            raise ConfigError("grid.bandwidth", "expected rule_of_thumb, cv or numbers")
    else:
        bw = tuple(float(v) for v in (bw if isinstance(bw, (list, tuple)) else [bw]))
        if any(v <= 0 for v in bw):
            raise ConfigError("grid.bandwidth", "bandwidths must be positive")
    return GridConfig(size, q, axes, bw)


def parse_bootstrap(raw) -> BootstrapConfig:
    b = _require_mapping(raw, "bootstrap")
    unknown = set(b) - {"enabled", "replicates", "interval", "dump_replicates"}
    if unknown:
        raise ConfigError(f"bootstrap.{sorted(unknown)[0]}", "unknown key")
    enabled = _bool(b.get("enabled", True), "bootstrap.enabled")
    reps = _int(b.get("replicates", 1000), "bootstrap.replicates")
    if enabled and reps < 2:
        raise ConfigError("bootstrap.replicates", "need at least 2 when the bootstrap is enabled")
    interval = b.get("interval", "normal")
    if interval not in ("normal", "percentile"):
        raise ConfigError("bootstrap.interval", "expected normal or percentile")
    return BootstrapConfig(enabled, reps, interval,
                           _bool(b.get("dump_replicates", False), "bootstrap.dump_replicates"))


def config_from_mapping(raw: Mapping, base_dir=".") -> AnalysisConfig:
    raw = _require_mapping(raw, "config")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    base = Path(base_dir)
    inp = _require_mapping(raw.get("input"), "input")
    for key in ("units", "adjacency"):
        if key not in inp:
            raise ConfigError(f"input.{key}", "missing path")
    unknown = set(inp) - {"units", "adjacency", "zips", "schema"}
    if unknown:
        raise ConfigError(f"input.{sorted(unknown)[0]}", "unknown key")
    resolve = lambda p: p if Path(p).is_absolute() else base / p  # noqa: E731
    schema = Schema.from_mapping(_require_mapping(inp.get("schema"), "input.schema"))

    drivers = raw.get("drivers", raw.get("driver", "border"))
    if isinstance(drivers, str):
        drivers = [drivers]
    try:
        drivers = tuple(DriverKind.parse(d) for d in drivers)
    except ValueError as exc:
        raise ConfigError("drivers", str(exc)) from None
    if not drivers:
        raise ConfigError("drivers", "at least one driver is required")

    window = raw.get("window")
    if window is not None:
        if not isinstance(window, (list, tuple)) or len(window) != 2:
            raise ConfigError("window", "expected [first, last]")
        lo, hi = (_int(v, "window") for v in window)
        if not 1 <= lo <= hi:
            raise ConfigError("window", "need 1 <= first <= last")
        window = (lo, hi)

    seed = _int(raw.get("seed", 0), "seed", 0)
    threads = _int(raw.get("threads", 1), "threads", 1)
    return AnalysisConfig(
        units=Path(resolve(inp["units"])),
        adjacency=Path(resolve(inp["adjacency"])),
        zips=None if inp.get("zips") is None else Path(resolve(inp["zips"])),
        schema=schema,
        drivers=drivers,
        window=window,
        learners=parse_learners(raw.get("learners")),
        grid=parse_grid(raw.get("grid")),
        bootstrap=parse_bootstrap(raw.get("bootstrap")),
        seed=seed,
        threads=threads,
        output=Path(resolve(raw.get("output", "results"))),
        placebo=_bool(raw.get("placebo", False), "placebo"),
        naive=_bool(raw.get("naive", False), "naive"),
        eif=_bool(raw.get("eif", False), "eif"),
        placebo_base=_int(raw.get("placebo_base", 4), "placebo_base", 1),
        raw=raw,
    )


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    return {} if data is None else data


def load_config(path) -> AnalysisConfig:
    return config_from_mapping(load_yaml(path), Path(path).parent)


def validate_against_panel(config: AnalysisConfig, n_periods: int) -> None:
    if config.window is not None and config.window[1] > n_periods:
        raise ConfigError("window", f"last period {config.window[1]} exceeds M = {n_periods}")
    if config.placebo and config.placebo_base >= n_periods:
        raise ConfigError("placebo_base", f"needs later pre-tax periods (M = {n_periods})")


def check_learner(kind: str, name: str) -> None:
    if name not in LEARNERS[kind]:
        raise UnknownLearner(kind, name)
