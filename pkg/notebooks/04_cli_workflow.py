# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Command-line workflow
#
# ``didrivers simulate`` writes a panel in the ingest format; ``didrivers
# estimate`` reads it back through a YAML config.  Here both run in-process in
# a scratch directory.

# %%
import tempfile
from pathlib import Path

import yaml

from didrivers.cli import main

work = Path(tempfile.mkdtemp())
(work / "dgp.yaml").write_text(yaml.safe_dump({"n_periods": 6, "seed": 5}))
main(["simulate", "--config", str(work / "dgp.yaml"), "--out", str(work / "data")])
print(sorted(p.name for p in (work / "data").iterdir()))

# %%
cfg = {"input": {"units": "data/units.csv", "adjacency": "data/adjacency.csv"},
       "drivers": ["border", "competition"], "bootstrap": {"replicates": 50},
       "placebo": True, "naive": True, "eif": True, "output": "results"}
(work / "analysis.yaml").write_text(yaml.safe_dump(cfg))
main(["estimate", "--config", str(work / "analysis.yaml")])
print((work / "results" / "estimates.csv").read_text())

# %% [markdown]
# Errors come back as a single line naming the module and field.

# %%
cfg["learners"] = {"density": "kde"}
(work / "bad.yaml").write_text(yaml.safe_dump(cfg))
print("exit", main(["estimate", "--config", str(work / "bad.yaml")]))
