import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from didrivers.panel import NeighborhoodGraph, PanelDataset
from didrivers.simlab import DgpSpec, generate

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture(scope="session")
def six_unit():
    raw = json.loads((ASSETS / "six_unit.json").read_text())

    def conv(v):
        if isinstance(v, list):
            return [conv(x) for x in v]
        return Fraction(v) if isinstance(v, str) else v

    return {k: {kk: conv(vv) for kk, vv in d.items()} for k, d in raw.items()}


@pytest.fixture(scope="session")
def small_sim():
    return generate(DgpSpec(n_periods=5, seed=11))


@pytest.fixture(scope="session")
def one_period_sim():
    return generate(DgpSpec(n_periods=1, seed=5))


def line_panel(M=2):
    """Three zips A-B-C in a line (A taxed, B taxed, C not) and a far control zip D."""
    graph = NeighborhoodGraph(
        adjacency={"A": frozenset({"B"}), "B": frozenset({"A", "C"}), "C": frozenset({"B"}),
                   "D": frozenset()},
        taxed={"A": True, "B": True, "C": False, "D": False},
        centroids={"A": (0.0, 0.0), "B": (0.0, 0.05), "C": (0.0, 0.1), "D": (10.0, 10.0)},
    )
    ids = ["a1", "a2", "b1", "c1", "d1", "d2"]
    group = [1, 1, 1, 0, 0, 0]
    zips = ["A", "A", "B", "C", "D", "D"]
    aux = [False, False, False, True, False, False]
    n = len(ids)
    outcomes = np.arange(n * 2 * M, dtype=float).reshape(n, 2, M)
    outcomes[3] = np.nan
    prices = np.array([[[40.0] * M, [42.0] * M],
                       [[41.0] * M, [44.0] * M],
                       [[39.0] * M, [40.5] * M],
                       [[37.0] * M, [38.0] * M],
                       [[35.0] * M, [35.0] * M],
                       [[36.0] * M, [36.0] * M]])
    cov = np.ones((n, M, 1))
    return PanelDataset(np.array(ids, dtype=object), np.array(group), np.array(zips, dtype=object),
                        np.array(aux), outcomes, prices, cov, ("x",), graph)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
