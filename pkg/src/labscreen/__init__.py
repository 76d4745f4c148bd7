"""Screening irregular longitudinal lab series for pre-event signal."""

__version__ = "0.1.0"

from .errors import LabScreenError
from .lmm import LmmFit, fit_lmm, loglik_at, blup_intercepts, predict_curve
from .spline import DesignSpec, KnotVector, design_matrix, make_knots, tps_basis
from .screening import MarkerReport, TestResult, bonferroni, knot_scan, lrt, test_criteria
from .special import chi2_sf

__all__ = [
    "LabScreenError", "LmmFit", "fit_lmm", "loglik_at", "blup_intercepts", "predict_curve",
    "DesignSpec", "KnotVector", "design_matrix", "make_knots", "tps_basis",
    "MarkerReport", "TestResult", "bonferroni", "knot_scan", "lrt", "test_criteria", "chi2_sf",
]
