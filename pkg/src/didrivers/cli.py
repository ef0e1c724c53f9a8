"""Command-line entry point.

Subcommands::

    didrivers estimate   --config analysis.yaml [--seed N] [--threads K] [--out DIR]
    didrivers placebo    --config analysis.yaml [--seed N] [--threads K] [--out DIR]
    didrivers simulate   --config dgp.yaml      [--seed N] [--out DIR]
    didrivers robustness --config dgp.yaml --reps 200 [--row GGBB] [--threads K] [--out DIR]

Every CSV starts with ``#`` lines giving the tool version, seed and config
hash.  Errors print one line ``error: module=<module> type=<name> cause=<text>``
to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import bootstrap_analysis, bootstrap_placebo
from .config import AnalysisConfig, load_config, load_yaml, validate_against_panel
from .errors import ConfigError, DidriversError, InvalidSpec
from .estimators import EffectCurve, naive_period_curves, placebo_curve, prepare_driver, \
    run_period_analysis
from .panel import ingest_panel, write_panel
from .simlab import TABLE1_ROWS, DgpSpec, generate, robustness_experiment


def _num(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def header_lines(seed, digest, extra=()) -> list[str]:
    return [f"didrivers {__version__}", f"seed: {seed}", f"config_hash: {digest}", *extra]


def write_csv(path: Path, header, columns, rows) -> Path:
    buf = io.StringIO()
    for h in header:
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _curve_rows(curve: EffectCurve):
    pts = curve.points
    nan = np.full(len(curve.values), np.nan)
    se = nan if curve.se is None else curve.se
    lo = nan if curve.lower is None else curve.lower
    hi = nan if curve.upper is None else curve.upper
    for k in range(len(curve.values)):
        yield [*map(float, pts[k]), float(curve.values[k]), float(curve.theta[k]),
               float(se[k]), float(lo[k]), float(hi[k])]


def write_curve(path: Path, header, curve: EffectCurve, dose_names) -> list[Path]:
    cols = list(dose_names) + ["adt", "theta", "se", "lower", "upper"]
    out = [write_csv(path, header, cols, _curve_rows(curve))]
    if len(curve.axes) > 1:
        surf = {k: (None if getattr(curve, k) is None else getattr(curve, k).reshape(curve.shape))
                for k in ("values", "se", "lower", "upper")}
        for dim in range(len(curve.axes)):
            x, vals, fixed = curve.slice_at_median(dim)
            idx = [len(a) // 2 for a in curve.axes]
            sel = tuple(slice(None) if k == dim else idx[k] for k in range(len(curve.axes)))
            band = {k: (np.full(len(x), np.nan) if v is None else v[sel]) for k, v in surf.items()}
            note = ", ".join(f"{dose_names[k]} fixed at {v!r}" for k, v in fixed.items())
            rows = [[float(x[g]), float(vals[g]), float(band["se"][g]), float(band["lower"][g]),
                     float(band["upper"][g])] for g in range(len(x))]
            p = path.with_name(f"{path.stem}_slice_{dose_names[dim]}.csv")
            out.append(write_csv(p, list(header) + [note], [dose_names[dim], "adt", "se", "lower",
                                                         "upper"], rows))
    return out


# -- estimate / placebo -----------------------------------------------------------------------


def _load(config: AnalysisConfig):
    panel = ingest_panel(config.units, config.adjacency, config.schema, config.zips)
    validate_against_panel(config, panel.n_periods)
    return panel


def _estimate_rows(driver, est, boot):
    def stats(name, value):
        if boot is None:
            return [value, float("nan"), float("nan"), float("nan")]
        return [value, *[float(boot[k][name][0]) for k in ("se", "lower", "upper")]]

    rows = [[driver, "headline", *stats("att", est.att), *stats("adutt", est.adutt),
             *stats("reda", est.reda)]]
    for m, p in est.periods.items():
        rows.append([driver, f"m{m}", *stats(f"att_m{m}", p.att), *stats(f"adutt_m{m}", p.adutt),
                     *stats(f"reda_m{m}", p.reda)])
    return rows


ESTIMATE_COLUMNS = ["driver", "scope"] + [f"{q}{s}" for q in ("att", "adutt", "reda")
                                          for s in ("", "_se", "_lower", "_upper")]


def cmd_estimate(config: AnalysisConfig, placebo_only: bool = False) -> list[Path]:
    panel = _load(config)
    est_cfg = config.estimation()
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    header = header_lines(config.seed, config.digest(),
                          [f"replicates: {config.bootstrap.replicates if config.bootstrap.enabled else 0}"])
    written: list[Path] = []
    est_rows, diag_rows, naive_rows = [], [], []
    for kind in config.drivers:
        name = kind.name.lower()
        prepared = prepare_driver(panel, kind, est_cfg)
        if not placebo_only:
            est = run_period_analysis(panel, kind, est_cfg, prepared=prepared)
            boot = None
            curve = est.curve
            if config.bootstrap.enabled:
                b = bootstrap_analysis(panel, kind, est_cfg, config.bootstrap.replicates,
                                       config.seed, config.threads, config.bootstrap.interval,
                                       estimates=est)
                boot = {"se": b.se, "lower": b.lower, "upper": b.upper}
                curve = b.banded_curve(curve)
                diag_rows.append([name, "all", "bootstrap", "replicate_failures",
                                  float(b.n_failed)])
                if config.bootstrap.dump_replicates:
                    written.append(b.write_replicates_csv(out / f"replicates_{name}.csv", header))
            est_rows += _estimate_rows(name, est, boot)
            written += write_curve(out / f"curve_{name}.csv", header, curve, est.dose.names)
            for m, p in est.periods.items():
                diag_rows.append([name, m, "estimation", "propensity_clip_fraction",
                                  float(p.clip_fraction)])
                if p.positivity is not None:
                    diag_rows += [[name, m, sec, key, float(v)] for sec, key, v in p.positivity.rows()]
                if p.eif is not None:
                    diag_rows += [[name, m, sec, key, float(v)] for sec, key, v in p.eif.rows()]
            diag_rows += [[name, "all", "smoothing", f"bandwidth_{k + 1}", float(h)]
                          for k, h in enumerate(curve.bandwidth)]
            if config.naive:
                nc = naive_period_curves(panel, kind, est_cfg, prepared=prepared)
                for row in _curve_rows(nc):
                    naive_rows.append([name, "naive", *row[:len(nc.axes)], row[len(nc.axes)]])
        if config.placebo or placebo_only:
            written += _write_placebo(panel, kind, config, est_cfg, prepared, out, header)
    if not placebo_only:
        written.append(write_csv(out / "estimates.csv", header, ESTIMATE_COLUMNS, est_rows))
        written.append(write_csv(out / "diagnostics.csv", header,
                                 ["driver", "period", "section", "name", "value"], diag_rows))
        if config.naive:
            width = max(len(r) for r in naive_rows) - 3
            cols = ["driver", "label"] + [f"dose_{k + 1}" for k in range(width)] + ["adt"]
            naive_rows = [r[:2] + r[2:-1] + [""] * (width - (len(r) - 3)) + [r[-1]]
                          for r in naive_rows]
            written.append(write_csv(out / "naive_curve.csv", header, cols, naive_rows))
    return written


def _write_placebo(panel, kind, config, est_cfg, prepared, out, header) -> list[Path]:
    name = kind.name.lower()
    pc = placebo_curve(panel, kind, est_cfg, prepared=prepared)
    bands = None
    if config.bootstrap.enabled:
        bands = bootstrap_placebo(panel, kind, est_cfg, config.bootstrap.replicates, config.seed,
                                  config.threads, config.bootstrap.interval)
    rows = []
    items = [("average", pc.average)] + [(f"m{m}", c) for m, c in pc.curves.items()]
    for key, c in items:
        if bands is not None:
            c = c.with_bands(bands.se[key], bands.lower[key], bands.upper[key])
        for row in _curve_rows(c):
            rows.append(["placebo", key, *row])
    dose_names = [f"dose_{k + 1}" for k in range(len(pc.average.axes))]
    cols = ["label", "pseudo_period", *dose_names, "adt", "theta", "se", "lower", "upper"]
    return [write_csv(out / f"placebo_{name}.csv", header, cols, rows)]


# -- simulate / robustness --------------------------------------------------------------------


def _spec_from_file(path, seed=None) -> tuple[DgpSpec, str, int | None]:
    raw = load_yaml(path) if path is not None else {}
    if not isinstance(raw, dict):
        raise InvalidSpec("config", "expected a mapping of DGP fields")
    reps = raw.pop("reps", None)
    if seed is not None:
        raw["seed"] = int(seed)
    spec = DgpSpec.from_mapping(raw)
    digest = hashlib.sha256(json.dumps(spec.to_mapping(), sort_keys=True).encode()).hexdigest()[:16]
    return spec, digest, reps


def cmd_simulate(spec: DgpSpec, digest: str, out) -> list[Path]:
    panel, truth = generate(spec)
    out = Path(out)
    header = header_lines(spec.seed, digest)
    paths = list(write_panel(panel, out, header=header).values())
    rows = [[scope, q, "", v] for scope, q, v in truth.rows()]
    dose = truth.grid[0]
    adt = truth.adt(dose) if len(truth.grid) == 1 else None
    if adt is not None:
        rows += [["curve", "adt", float(d), float(a)] for d, a in zip(dose, adt)]
    paths.append(write_csv(out / "truth.csv", header, ["scope", "quantity", "dose", "value"], rows))
    return paths


def parse_row_filter(text: str) -> tuple[bool, ...]:
    t = text.strip().upper()
    if len(t) != 4 or set(t) - {"G", "B"}:
        raise InvalidSpec("row", "expected four letters G/B for (mu1, pi_D, mu0, pi_A)")
    return tuple(c == "G" for c in t)


def cmd_robustness(spec: DgpSpec, digest: str, reps: int, out, rows=None, threads=1) -> list[Path]:
    result = robustness_experiment(spec, rows=rows, reps=reps, threads=threads)
    order = {p: k + 1 for k, (p, _) in enumerate(TABLE1_ROWS)}
    table = []
    for r in result:
        lab = r.labels()
        exp = tuple("Biased" if e else "Unbiased" for e in r.expected)
        table.append([order[r.pattern], *lab[:4], r.att_bias, r.att_se, lab[4], exp[0],
                      r.adutt_bias, r.adutt_se, lab[5], exp[1], int(r.agrees)])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    header = header_lines(spec.seed, digest, [f"reps: {reps}",
                                              f"agreement: {sum(r.agrees for r in result)}/{len(result)}"])
    cols = ["row", "mu1", "pi_d", "mu0", "pi_a", "att_bias", "att_se", "att_verdict",
            "att_expected", "adutt_bias", "adutt_se", "adutt_verdict", "adutt_expected", "agrees"]
    return [write_csv(out / "robustness.csv", header, cols, table)]


# -- entry point ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="didrivers", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"didrivers {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs in (("estimate", True), ("placebo", True), ("simulate", False),
                        ("robustness", False)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=needs, help="YAML configuration or DGP spec")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", help="output directory")
        if name == "robustness":
            s.add_argument("--reps", type=int)
            s.add_argument("--row", action="append",
                           help="only this Good/Bad pattern, e.g. GGGG (repeatable)")
    return p


def _module_of(exc: BaseException) -> str:
    mod = getattr(exc, "module", None)
    if mod:
        return mod
    return type(exc).__module__.rsplit(".", 1)[-1]


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("estimate", "placebo"):
        cfg = load_config(args.config).with_overrides(args.seed, args.threads, args.out)
        cmd_estimate(cfg, placebo_only=args.command == "placebo")
    elif args.command == "simulate":
        spec, digest, _ = _spec_from_file(args.config, args.seed)
        cmd_simulate(spec, digest, args.out or "simulated")
    else:
        spec, digest, reps = _spec_from_file(args.config, args.seed)
        reps = args.reps if args.reps is not None else (reps if reps is not None else 200)
        if reps < 2:
            raise InvalidSpec("reps", "need at least 2 replicates for a standard error")
        rows = [parse_row_filter(r) for r in args.row] if args.row else None
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        cmd_robustness(spec, digest, reps, args.out or "robustness", rows, args.threads or 1)
    return 0


def main(argv=None) -> int:
    try:
        code = run(argv)
    except DidriversError as exc:
        cause = str(exc).replace("\n", " ")
        print(f"error: module={_module_of(exc)} type={type(exc).__name__} cause={cause}",
              file=sys.stderr)
        code = 1
    except (OSError, ValueError) as exc:
        cause = str(exc).replace("\n", " ")
        print(f"error: module=cli type={type(exc).__name__} cause={cause}", file=sys.stderr)
        code = 1
    return code


if __name__ == "__main__":
    sys.exit(main())
