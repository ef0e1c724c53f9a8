import csv

import numpy as np
import pytest
import yaml

from didrivers import __version__
from didrivers.cli import main


def _rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _header(path):
    return [ln[2:] for ln in path.read_text().splitlines() if ln.startswith("#")]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    dgp = root / "dgp.yaml"
    dgp.write_text(yaml.safe_dump({"n_treated": 60, "n_control": 60, "n_periods": 5,
                                   "n_auxiliary": 8}))
    assert main(["simulate", "--config", str(dgp), "--seed", "3", "--out", str(root / "data")]) == 0
    return root


def _analysis(root, name, **over):
    cfg = {"input": {"units": "data/units.csv", "adjacency": "data/adjacency.csv"},
           "drivers": ["border"], "bootstrap": {"replicates": 20}, "seed": 9,
           "output": f"out_{name}", "placebo": True, "naive": True, "eif": True}
    cfg.update(over)
    path = root / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_simulate_writes_panel_and_truth(simulated):
    data = simulated / "data"
    for f in ("units.csv", "adjacency.csv", "zips.csv", "truth.csv"):
        assert (data / f).exists()
    head = _header(data / "truth.csv")
    assert head[0] == f"didrivers {__version__}" and head[1] == "seed: 3"
    truth = {(r["scope"], r["quantity"]): r["value"] for r in _rows(data / "truth.csv")}
    assert float(truth["headline", "adutt"]) == pytest.approx(-25.0)


def test_estimate_outputs(simulated):
    cfg = _analysis(simulated, "full")
    assert main(["estimate", "--config", str(cfg)]) == 0
    out = simulated / "out_full"
    names = {p.name for p in out.iterdir()}
    assert {"estimates.csv", "curve_border.csv", "diagnostics.csv", "naive_curve.csv",
            "placebo_border.csv"} <= names
    est = _rows(out / "estimates.csv")
    assert [r["scope"] for r in est] == ["headline"] + [f"m{m}" for m in range(1, 6)]
    for r in est:
        att, adutt, reda = (float(r[k]) for k in ("att", "adutt", "reda"))
        assert reda == pytest.approx((att - adutt) / att, rel=1e-12)
        assert float(r["att_se"]) > 0
        assert float(r["att_lower"]) < att < float(r["att_upper"])
    curve = _rows(out / "curve_border.csv")
    assert len(curve) == 100
    assert all(float(c["lower"]) <= float(c["adt"]) <= float(c["upper"]) for c in curve)
    diag = _rows(out / "diagnostics.csv")
    assert {"propensity_clip_fraction", "bandwidth_1"} <= {d["name"] for d in diag}
    assert _header(out / "estimates.csv")[1] == "seed: 9"


def test_rerun_is_byte_identical(simulated):
    cfg = _analysis(simulated, "again", bootstrap={"replicates": 5})
    assert main(["estimate", "--config", str(cfg), "--threads", "2"]) == 0
    first = {p.name: p.read_bytes() for p in (simulated / "out_again").iterdir()}
    assert main(["estimate", "--config", str(cfg)]) == 0
    second = {p.name: p.read_bytes() for p in (simulated / "out_again").iterdir()}
    assert first == second


def test_seed_flag_changes_bands_not_points(simulated):
    cfg = _analysis(simulated, "seeds", bootstrap={"replicates": 5}, placebo=False, naive=False)
    main(["estimate", "--config", str(cfg), "--out", str(simulated / "s1")])
    main(["estimate", "--config", str(cfg), "--seed", "10", "--out", str(simulated / "s2")])
    a, b = _rows(simulated / "s1" / "estimates.csv"), _rows(simulated / "s2" / "estimates.csv")
    assert a[0]["att"] == b[0]["att"]
    assert a[0]["att_se"] != b[0]["att_se"]


def test_replicate_dump(simulated):
    cfg = _analysis(simulated, "dump", placebo=False, naive=False,
                    bootstrap={"replicates": 4, "dump_replicates": True})
    assert main(["estimate", "--config", str(cfg)]) == 0
    reps = _rows(simulated / "out_dump" / "replicates_border.csv")
    assert len(reps) == 4


def test_placebo_subcommand(simulated):
    cfg = _analysis(simulated, "plac", bootstrap={"enabled": False})
    assert main(["placebo", "--config", str(cfg)]) == 0
    out = simulated / "out_plac"
    assert [p.name for p in out.iterdir()] == ["placebo_border.csv"]
    rows = _rows(out / "placebo_border.csv")
    labels = {r["pseudo_period"] for r in rows}
    assert labels == {"average", "m5"}  # base period 4 against each later period


def test_unknown_learner_exits_with_field(simulated, capsys):
    cfg = _analysis(simulated, "bad", learners={"propensity": "forest"})
    assert main(["estimate", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: module=config type=ConfigError")
    assert "learners.propensity" in err
    assert len(err.splitlines()) == 1


def test_missing_input_file(simulated, capsys):
    cfg = _analysis(simulated, "missing", input={"units": "nope.csv",
                                                 "adjacency": "data/adjacency.csv"})
    assert main(["estimate", "--config", str(cfg)]) == 1
    assert capsys.readouterr().err.startswith("error: module=")


def test_robustness_refuses_single_rep(tmp_path, capsys):
    dgp = tmp_path / "dgp.yaml"
    dgp.write_text(yaml.safe_dump({"n_periods": 1}))
    assert main(["robustness", "--config", str(dgp), "--reps", "1",
                 "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "module=simlab" in err and "reps" in err


def test_robustness_row_filter(tmp_path):
    dgp = tmp_path / "dgp.yaml"
    dgp.write_text(yaml.safe_dump({"n_treated": 60, "n_control": 60, "n_periods": 1,
                                   "n_auxiliary": 0}))
    assert main(["robustness", "--config", str(dgp), "--reps", "3", "--row", "ggbb",
                 "--out", str(tmp_path / "rob")]) == 0
    rows = _rows(tmp_path / "rob" / "robustness.csv")
    assert len(rows) == 1
    r = rows[0]
    assert (r["row"], r["mu1"], r["pi_a"]) == ("13", "Good", "Bad")
    assert (r["att_expected"], r["adutt_expected"]) == ("Biased", "Biased")
    assert np.isfinite(float(r["att_bias"]))


def test_bad_row_pattern(tmp_path, capsys):
    dgp = tmp_path / "dgp.yaml"
    dgp.write_text(yaml.safe_dump({"n_periods": 1}))
    assert main(["robustness", "--config", str(dgp), "--reps", "3", "--row", "GGX",
                 "--out", str(tmp_path)]) == 1
    assert "row" in capsys.readouterr().err
