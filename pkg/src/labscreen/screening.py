"""Three-criterion likelihood-ratio screen and AIC knot scan.

For one marker:

1. overall: full case/control model vs. the same model without the
   case x spline interaction (curves differ only by a shift);
2. cases: spline-in-time model vs. linear-in-time model among cases;
3. controls: the same comparison among controls.

A marker passes when tests 1 and 2 reject and test 3 does not, each after
a Bonferroni correction over the three tests.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import (
    DomainError,
    InsufficientDataError,
    LabScreenError,
    NestingViolationError,
    ScanFailureError,
)
from .lmm import LmmFit, fit_design, predict_curve
from .special import chi2_sf
from .spline import (
    SCAN_MAX_KNOTS,
    SCAN_STEP,
    DesignSpec,
    KnotVector,
    design_matrix,
    default_knots,
    scan_knots,
)

log = logging.getLogger(__name__)

ALPHA = 0.05
N_TESTS = 3
NESTING_SLACK = 1e-6
AIC_TIE = 1e-9


@dataclass
class TestResult:
    statistic: float
    df: int
    p_raw: float
    p_adjusted: float | None = None

    __test__ = False  # not a pytest class


@dataclass
class MarkerReport:
    marker: str
    test_overall: TestResult
    test_cases_nonlinear: TestResult
    test_controls_linear: TestResult
    passes: bool
    onset_days: int | None = None
    aic_trace: list = field(default_factory=list)
    alpha: float = ALPHA
    covariates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aic_trace"] = [[m, (a if np.isfinite(a) else None)] for m, a in self.aic_trace]
        return d


def bonferroni(p: float, m: int = N_TESTS) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p-value must be in [0, 1], got {p}")
    if m < 1:
        raise DomainError(f"number of tests must be positive, got {m}")
    return min(1.0, m * p)


def lrt(ll_full: float, ll_reduced: float, df: int) -> TestResult:
    """Likelihood-ratio test of nested maximum-likelihood fits."""
    if df < 1:
        raise DomainError(f"df must be >= 1, got {df}")
    diff = ll_full - ll_reduced
    if diff < -NESTING_SLACK:
        raise NestingViolationError(
            f"full model log-likelihood {ll_full:.8g} below reduced {ll_reduced:.8g}"
        )
    stat = max(0.0, 2.0 * diff)
    return TestResult(statistic=stat, df=int(df), p_raw=chi2_sf(stat, df))


def usable_covariates(data: pd.DataFrame, covariates, subject_col="record") -> list:
    """Covariates that are linearly independent of the intercept and each other.

    Evaluated on one row per subject; a race category absent from the data,
    for example, is dropped rather than making the design singular.
    """
    covariates = list(covariates)
    if not covariates:
        return []
    per_subject = data.drop_duplicates(subject_col)[covariates].to_numpy(float)
    A = np.column_stack([np.ones(len(per_subject)), per_subject])
    A = A / np.maximum(np.abs(A).max(axis=0), 1e-300)
    tol = max(A.shape) * np.finfo(float).eps * 100 * np.sqrt(len(A))
    # greedy in original column order so the earliest of a dependent set stays
    keep = []
    for j in range(1, A.shape[1]):
        s = linalg.svdvals(A[:, [0] + [k + 1 for k in keep] + [j]])
        if s[-1] > tol:
            keep.append(j - 1)
    dropped = [c for i, c in enumerate(covariates) if i not in keep]
    if dropped:
        log.debug("dropping degenerate covariates %s", dropped)
    return [covariates[i] for i in keep]


def _fit(data, spec, subject_col) -> LmmFit:
    return fit_design(design_matrix(data, spec, subject_col=subject_col))


def _nested_test(data, full: DesignSpec, reduced: DesignSpec, df: int, subject_col):
    ll_full = _fit(data, full, subject_col).loglik
    ll_red = _fit(data, reduced, subject_col).loglik
    return lrt(ll_full, ll_red, df)


def _require(data, what):
    if data.empty:
        raise InsufficientDataError(f"no measurements among {what}")
    return data


def test_criteria(data: pd.DataFrame, marker: str = "", knots: KnotVector | None = None,
                  covariates=(), alpha: float = ALPHA, subject_col: str = "record",
                  n_tests: int = N_TESTS) -> MarkerReport:
    """Run the three criterion tests for one marker.

    ``data`` is long format (one row per measurement) with columns
    ``subject_col``, ``t``, ``value``, ``case`` and the covariates.
    """
    knots = default_knots() if knots is None else knots
    cases = _require(data.loc[data["case"] == 1], "cases")
    controls = _require(data.loc[data["case"] == 0], "controls")
    K = len(knots)

    covs = usable_covariates(data, covariates, subject_col)
    full = DesignSpec(knots, covs, case_shift=True, interaction=True)
    overall = _nested_test(data, full, full.replace(interaction=False), K + 1, subject_col)

    results = []
    for subset in (cases, controls):
        covs_s = usable_covariates(subset, covariates, subject_col)
        spline = DesignSpec(knots, covs_s, case_shift=False, interaction=False)
        linear = spline.replace(knots=KnotVector(()))
        results.append(_nested_test(subset, spline, linear, K, subject_col))
    c2, c3 = results

    for res in (overall, c2, c3):
        res.p_adjusted = bonferroni(res.p_raw, n_tests)
    passes = (overall.p_adjusted < alpha and c2.p_adjusted < alpha
              and c3.p_adjusted >= alpha)
    return MarkerReport(marker, overall, c2, c3, bool(passes), alpha=alpha, covariates=covs)


test_criteria.__test__ = False


def knot_scan(case_data: pd.DataFrame, covariates=(), max_knots: int = SCAN_MAX_KNOTS,
              step: float = SCAN_STEP, subject_col: str = "record"):
    """Locate departure onset by AIC over nested knot prefixes.

    Fits the within-group spline model among cases with knots at
    ``-step, ..., -m*step`` for ``m = 0..max_knots``.  Returns
    ``(onset_days, aic_trace)``; onset is ``None`` when the linear model
    (``m = 0``) has the smallest AIC.
    """
    _require(case_data, "cases")
    covs = usable_covariates(case_data, covariates, subject_col)
    trace = []
    for m in range(max_knots + 1):
        spec = DesignSpec(scan_knots(m, step, max_knots), covs,
                          case_shift=False, interaction=False)
        try:
            aic = _fit(case_data, spec, subject_col).aic
        except LabScreenError as exc:
            log.warning("knot scan: model with %d knots failed: %s", m, exc)
            aic = float("nan")
        trace.append((m, float(aic)))
    aics = np.array([a for _, a in trace])
    finite = np.isfinite(aics)
    if not finite.any():
        raise ScanFailureError("every knot-scan model failed to fit")
    best = np.nanmin(aics)
    m_best = int(np.flatnonzero(finite & (aics <= best + AIC_TIE))[0])
    onset = None if m_best == 0 else int(round(m_best * step))
    return onset, trace


def screen_marker(data: pd.DataFrame, marker: str, knots: KnotVector | None = None,
                  covariates=(), alpha: float = ALPHA, max_knots: int = SCAN_MAX_KNOTS,
                  step: float = SCAN_STEP, subject_col: str = "record",
                  always_scan: bool = False, n_tests: int = N_TESTS) -> MarkerReport:
    """Criteria tests, then the knot scan for passing markers."""
    report = test_criteria(data, marker, knots, covariates, alpha, subject_col, n_tests)
    if report.passes or always_scan:
        onset, trace = knot_scan(data.loc[data["case"] == 1], covariates, max_knots,
                                 step, subject_col)
        report.aic_trace = trace
        if report.passes:
            report.onset_days = onset
    return report


def marker_curves(data: pd.DataFrame, knots: KnotVector | None = None, covariates=(),
                  grid=None, subject_col: str = "record") -> pd.DataFrame:
    """Case and control population curves from the full model.

    Covariates are held at their mean over subjects.  Columns:
    ``t, group, mean, lo, hi``.
    """
    knots = default_knots() if knots is None else knots
    covs = usable_covariates(data, covariates, subject_col)
    spec = DesignSpec(knots, covs)
    fit = _fit(data, spec, subject_col)
    profile = data.drop_duplicates(subject_col)[covs].mean().to_dict()
    frames = []
    for group in ("control", "case"):
        c = predict_curve(fit, spec, group, profile, grid)
        frames.append(pd.DataFrame({"t": c.grid, "group": group, "mean": c.mean,
                                    "lo": c.lower, "hi": c.upper}))
    return pd.concat(frames, ignore_index=True)
