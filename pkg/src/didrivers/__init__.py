"""Drivers of policy-effect heterogeneity under difference-in-differences.

Estimates the ATT, dose-effect curves (ADT), the dose-unconfounded effect
(ADUTT) and the relative effect of dose assignment (REDA) from a store-level
panel, with a weighted overlapping-block bootstrap for inference.
"""

__version__ = "0.1.0"

from .bootstrap import BlockStructure, BootstrapResult, BootstrapWeights, bootstrap_analysis, \
    build_blocks, draw_weights
from .errors import DidriversError
from .estimators import EffectCurve, EffectEstimates, EifComponents, EstimationConfig, \
    GridConfig, compute_components, compute_eif_diagnostics, compute_tau, compute_xi, \
    estimate_adt_curve, estimate_adutt, estimate_att, estimate_reda, naive_curve, \
    placebo_curve, run_period_analysis
from .exposure import AdjustmentSpec, DoseVector, DriverKind, assemble_dose, attach_dose, \
    border_distance, price_change, price_competition
from .nuisance import NuisanceModels, fit_dose_density, fit_nuisances, fit_propensity, \
    fit_trend, positivity_diagnostic
from .panel import MatchedPeriodSlice, NeighborhoodGraph, PanelDataset, Schema, UnitRecord, \
    ingest_panel, slice_matched_period, write_panel
from .simlab import DgpSpec, GroundTruth, brute_force_oracle, generate, robustness_experiment
