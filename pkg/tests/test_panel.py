import numpy as np
import pytest

from didrivers.errors import AsymmetricAdjacency, DuplicateUnitPeriod, InconsistentUnit, \
    MissingColumn, MissingOutcome, NonBinaryGroup, PeriodOutOfRange, UnknownZip
from didrivers.panel import Schema, great_circle_miles, ingest_panel, slice_matched_period, \
    slice_periods, write_panel

from conftest import line_panel


def _write(tmp_path, units, adjacency="zip_a,zip_b\nA,B\nB,A\n", zips="zip,taxed,lat,lon\nA,1,0,0\nB,0,0,0.1\n"):
    (tmp_path / "units.csv").write_text(units)
    (tmp_path / "adjacency.csv").write_text(adjacency)
    (tmp_path / "zips.csv").write_text(zips)
    return tmp_path / "units.csv", tmp_path / "adjacency.csv"


UNITS = """unit_id,group,zip,t,m,outcome,price,x
u1,1,A,0,1,10,40,0.5
u1,1,A,1,1,8,42,0.5
u2,0,B,0,1,11,39,1.5
u2,0,B,1,1,12,39,1.5
"""


def test_ingest_minimal(tmp_path):
    panel = ingest_panel(*_write(tmp_path, UNITS))
    assert panel.n_periods == 1
    assert panel.covariate_names == ("x",)
    assert panel.n_treated == 1 and panel.n_control == 1
    s = slice_matched_period(panel, 1)
    np.testing.assert_array_equal(s.dy, [-2.0, 1.0])
    assert panel.graph.neighbors("A") == frozenset({"B"})


def test_roundtrip_is_bitwise(tmp_path, small_sim):
    panel, _ = small_sim
    write_panel(panel, tmp_path, header=["test"])
    back = ingest_panel(tmp_path / "units.csv", tmp_path / "adjacency.csv")
    np.testing.assert_array_equal(back.unit_ids, panel.unit_ids)
    np.testing.assert_array_equal(back.outcomes, panel.outcomes)
    np.testing.assert_array_equal(back.prices, panel.prices)
    analytic = panel.analytic
    np.testing.assert_array_equal(back.covariates[analytic], panel.covariates[analytic])
    assert dict(back.graph.adjacency) == dict(panel.graph.adjacency)
    assert dict(back.graph.centroids) == dict(panel.graph.centroids)


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn) as e:
        ingest_panel(*_write(tmp_path, UNITS.replace("outcome", "sales")),
                     schema={"covariates": ["x"]})
    assert e.value.column == "outcome"


def test_schema_mapping(tmp_path):
    panel = ingest_panel(*_write(tmp_path, UNITS.replace("outcome", "sales")),
                         schema={"outcome": "sales"})
    assert panel.outcomes[0, 1, 0] == 8.0


def test_nonbinary_group(tmp_path):
    with pytest.raises(NonBinaryGroup) as e:
        ingest_panel(*_write(tmp_path, UNITS.replace("u2,0,B,0", "u2,2,B,0")))
    assert e.value.row == 2


def test_asymmetric_adjacency(tmp_path):
    with pytest.raises(AsymmetricAdjacency):
        ingest_panel(*_write(tmp_path, UNITS, adjacency="zip_a,zip_b\nA,B\n"))
    panel = ingest_panel(*_write(tmp_path, UNITS, adjacency="zip_a,zip_b\nA,B\n"),
                         schema=Schema(symmetrize_adjacency=True))
    assert panel.graph.neighbors("B") == frozenset({"A"})


def test_duplicate_record(tmp_path):
    with pytest.raises(DuplicateUnitPeriod):
        ingest_panel(*_write(tmp_path, UNITS + "u2,0,B,1,1,12,39,1.5\n"))


def test_inconsistent_unit(tmp_path):
    with pytest.raises(InconsistentUnit):
        ingest_panel(*_write(tmp_path, UNITS.replace("u2,0,B,1", "u2,0,A,1")))


def test_unknown_zip(tmp_path):
    with pytest.raises(UnknownZip):
        ingest_panel(*_write(tmp_path, UNITS.replace("u2,0,B,1", "u2,0,Q,1").replace("u2,0,B,0", "u2,0,Q,0")))


def test_missing_outcome(tmp_path):
    with pytest.raises(MissingOutcome):
        ingest_panel(*_write(tmp_path, UNITS.replace("u2,0,B,1,1,12", "u2,0,B,1,1,")))


def test_period_out_of_range():
    with pytest.raises(PeriodOutOfRange):
        slice_matched_period(line_panel(M=2), 3)


def test_slice_excludes_auxiliary():
    panel = line_panel()
    s = slice_matched_period(panel, 2)
    assert list(s.unit_ids) == ["a1", "a2", "b1", "d1", "d2"]
    assert np.isfinite(s.dy).all()


def test_placebo_slice_uses_pre_period_outcomes():
    panel = line_panel(M=3)
    s = slice_periods(panel, (0, 1), (0, 3), covariate_period=1, placebo=True)
    idx = panel.analytic_index
    np.testing.assert_array_equal(s.dy, panel.outcomes[idx, 0, 2] - panel.outcomes[idx, 0, 0])
    assert s.placebo


def test_neighborhood_units():
    panel = line_panel()
    b1 = panel.index_of("b1")
    assert sorted(panel.unit_ids[panel.neighborhood_units(b1)]) == ["a1", "a2", "c1"]
    assert sorted(panel.unit_ids[panel.neighborhood_units(b1, taxed_only=True)]) == ["a1", "a2"]


def test_arrays_are_read_only():
    panel = line_panel()
    with pytest.raises(ValueError):
        panel.outcomes[0, 0, 0] = 1.0


def test_great_circle_known_distance():
    # one degree of longitude on the equator
    assert great_circle_miles(0.0, 0.0, 0.0, 1.0) == pytest.approx(2 * np.pi * 3958.8 / 360, rel=1e-12)
    assert great_circle_miles(40.0, -75.0, 40.0, -75.0) == 0.0
