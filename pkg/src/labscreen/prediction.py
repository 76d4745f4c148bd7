"""Held-out validation of screened markers.

Each cohort record is summarised by demographics plus, per marker, a few
window features; logistic models with and without the marker features are
fitted on the training split and compared on the validation split by
c-statistic with a paired DeLong test.

The predictor is a two-stage stand-in (summary features + logistic
regression) for a functional regression on the whole trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit

from .errors import DegenerateLabelsError, InvalidInputError, PairingError
from .lmm import fit_lmm, shrunken_intercepts

log = logging.getLogger(__name__)

PREDICTOR_NOTE = ("two-stage predictor: window summary features + logistic regression "
                  "(stands in for penalized functional regression)")
FEATURES = ("mean", "slope", "recent", "blup", "missing")
RECENT_DAYS = 14
BASELINE_WINDOW = (-60.0, -30.0)
RIDGE_FALLBACK = 1e-4


# --- features --------------------------------------------------------------

@dataclass
class BlupModel:
    """Label-free linear-trend model used to shrink subject intercepts."""

    beta: np.ndarray
    lam: float
    covariates: tuple

    def residuals(self, series: pd.DataFrame, covariates: pd.DataFrame) -> np.ndarray:
        X = self._design(series, covariates)
        return series["value"].to_numpy(float) - X @ self.beta

    def _design(self, series, covariates):
        cov = covariates.loc[series["record"], list(self.covariates)].to_numpy(float)
        return np.column_stack([np.ones(len(series)), series["t"].to_numpy(float), cov])


def fit_blup_model(series: pd.DataFrame, covariates: pd.DataFrame, names=()) -> BlupModel | None:
    names = tuple(c for c in names
                  if covariates.loc[series["record"].unique(), c].nunique() > 1)
    if series["record"].nunique() < 2:
        return None
    model = BlupModel(np.zeros(2 + len(names)), 0.0, names)
    X = model._design(series, covariates)
    try:
        fit = fit_lmm(series["value"].to_numpy(float), X, series["record"].to_numpy())
    except (ArithmeticError, ValueError) as exc:
        log.warning("BLUP model failed (%s); shrunken intercepts set to 0", exc)
        return None
    return BlupModel(fit.beta, fit.lam, names)


def _per_record(series: pd.DataFrame, index) -> pd.DataFrame:
    g = series.groupby("record", sort=True)
    n = g.size()
    t = series["t"].to_numpy(float)
    v = series["value"].to_numpy(float)
    tm = g["t"].transform("mean").to_numpy()
    vm = g["value"].transform("mean").to_numpy()
    sxy = pd.Series((t - tm) * (v - vm)).groupby(series["record"].to_numpy()).sum()
    sxx = pd.Series((t - tm) ** 2).groupby(series["record"].to_numpy()).sum()
    slope = (sxy / sxx.where(sxx > 0)).where(n >= 2).fillna(0.0)

    recent = series.loc[series["t"] >= -RECENT_DAYS].groupby("record")["value"].mean()
    lo, hi = BASELINE_WINDOW
    base = series.loc[series["t"].between(lo, hi)].groupby("record")["value"].mean()
    out = pd.DataFrame(index=pd.Index(index, name="record"))
    out["n"] = n.reindex(out.index).fillna(0).astype(int)
    out["mean"] = g["value"].mean().reindex(out.index)
    out["slope"] = slope.reindex(out.index)
    out["recent"] = (recent - base).reindex(out.index)
    return out


def build_features(series: pd.DataFrame, covariates: pd.DataFrame, marker: str,
                   blup_model: BlupModel | None = None, covariate_names=()) -> pd.DataFrame:
    """Per-record marker features.

    ``series`` holds one marker's windowed rows (``record, t, value``);
    ``covariates`` is indexed by record and defines which records get a
    row.  Returns columns ``<marker>_mean, _slope, _recent, _blup,
    _missing``.  Records with fewer than two measurements get slope 0 and
    ``_missing = 1``; unavailable features are zero-filled.
    """
    series = series.loc[series["record"].isin(covariates.index)]
    feats = _per_record(series, covariates.index)
    blup = pd.Series(0.0, index=covariates.index)
    if blup_model is not None and not series.empty:
        labels, b = shrunken_intercepts(blup_model.residuals(series, covariates),
                                        series["record"].to_numpy(), blup_model.lam)
        blup.loc[labels] = b
    feats["blup"] = blup
    feats["missing"] = (feats["n"] < 2).astype(float)
    feats = feats.drop(columns="n").fillna(0.0)
    return feats.add_prefix(f"{marker}_")


# --- logistic regression ---------------------------------------------------

@dataclass
class LogisticFit:
    coef: np.ndarray               # intercept first
    separable: bool = False
    n_iter: int = 0
    converged: bool = True

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, float).reshape(len(X), -1)
        return expit(self.coef[0] + X @ self.coef[1:])


def _irls(A, y, ridge, max_iter, tol):
    beta = np.zeros(A.shape[1])
    penalty = np.full(A.shape[1], ridge)
    penalty[0] = 0.0
    for it in range(1, max_iter + 1):
        p = expit(A @ beta)
        w = p * (1 - p)
        grad = A.T @ (y - p) - penalty * beta
        H = (A * w[:, None]).T @ A + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            return beta, it, False
        if np.max(np.abs(step)) < tol:
            return beta, it, True
        if ridge == 0 and np.linalg.norm(beta) > 1e3:
            return beta, it, False
    return beta, max_iter, False


def fit_logistic(X, y, max_iter: int = 100, tol: float = 1e-8) -> LogisticFit:
    """Maximum-likelihood logistic regression by IRLS (Newton) from zeros.

    An intercept is prepended.  If the coefficients diverge (separation),
    the fit is repeated with a ridge penalty of 1e-4 on the slopes and
    ``separable`` is set.
    """
    y = np.asarray(y, dtype=float).ravel()
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("labels contain a single class")
    X = np.asarray(X, dtype=float).reshape(y.size, -1)
    A = np.column_stack([np.ones(y.size), X])
    beta, n_iter, ok = _irls(A, y, 0.0, max_iter, tol)
    if ok:
        return LogisticFit(beta, False, n_iter, True)
    log.info("logistic fit diverged after %d iterations; refitting with ridge", n_iter)
    beta, n_iter, ok = _irls(A, y, RIDGE_FALLBACK, max_iter * 10, tol)
    return LogisticFit(beta, True, n_iter, ok)


# --- ROC -------------------------------------------------------------------

@dataclass
class RocResult:
    c: float
    n_cases: int
    n_controls: int
    scores: np.ndarray = field(repr=False, default=None)
    labels: np.ndarray = field(repr=False, default=None)


def _split_labels(labels):
    labels = np.asarray(labels).astype(bool)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateLabelsError("c-statistic needs both cases and controls")
    return labels, n1, n0


def c_statistic(scores, labels) -> RocResult:
    """Area under the ROC curve via the Mann-Whitney rank sum (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels, n1, n0 = _split_labels(labels)
    if scores.size != labels.size:
        raise InvalidInputError("scores and labels differ in length")
    ranks = stats.rankdata(scores)
    u = ranks[labels].sum() - n1 * (n1 + 1) / 2.0
    return RocResult(float(u / (n1 * n0)), n1, n0, scores, labels)


def _placements(scores, labels):
    """DeLong structural components for one score vector."""
    pos, neg = scores[labels], scores[~labels]
    r_all = stats.rankdata(scores)
    r_pos = stats.rankdata(pos)
    r_neg = stats.rankdata(neg)
    v10 = (r_all[labels] - r_pos) / neg.size          # per case: share of controls below
    v01 = 1.0 - (r_all[~labels] - r_neg) / pos.size   # per control: share of cases above
    return v10, v01


def _align(base, augmented, labels):
    if isinstance(base, pd.Series) or isinstance(augmented, pd.Series):
        if not (isinstance(base, pd.Series) and isinstance(augmented, pd.Series)
                and isinstance(labels, pd.Series)):
            raise PairingError("pass base, augmented and labels all as Series or all as arrays")
        if not (set(base.index) == set(augmented.index) == set(labels.index)) or \
                base.index.has_duplicates:
            raise PairingError("score vectors are not paired on the same subjects")
        idx = base.index
        return (base.to_numpy(float), augmented.loc[idx].to_numpy(float),
                labels.loc[idx].to_numpy())
    base = np.asarray(base, float).ravel()
    augmented = np.asarray(augmented, float).ravel()
    labels = np.asarray(labels).ravel()
    if not base.size == augmented.size == labels.size:
        raise PairingError("score vectors are not paired on the same subjects")
    return base, augmented, labels


def compare_auc(base, augmented, labels) -> float:
    """One-sided paired DeLong p-value for AUC(augmented) > AUC(base)."""
    base, augmented, labels = _align(base, augmented, labels)
    labels, n1, n0 = _split_labels(labels)
    v10 = np.empty((2, n1))
    v01 = np.empty((2, n0))
    for k, s in enumerate((base, augmented)):
        v10[k], v01[k] = _placements(s, labels)
    aucs = v10.mean(axis=1)
    diff = aucs[1] - aucs[0]
    s10 = np.cov(v10) if n1 > 1 else np.zeros((2, 2))
    s01 = np.cov(v01) if n0 > 1 else np.zeros((2, 2))
    contrast = np.array([-1.0, 1.0])
    var = contrast @ (s10 / n1 + s01 / n0) @ contrast
    if abs(diff) < 1e-15:
        return 0.5
    if var <= 0:
        return 0.0 if diff > 0 else 1.0
    return float(stats.norm.sf(diff / np.sqrt(var)))


# --- validation ------------------------------------------------------------

@dataclass
class ValidationResult:
    marker: str
    c_base: float
    c_marker: float
    p_improvement: float
    n_validation_cases: int
    n_validation_controls: int
    separability_flag: bool


def _standardize(train: pd.DataFrame, valid: pd.DataFrame):
    mu = train.mean()
    sd = train.std(ddof=0)
    keep = sd.index[sd > 1e-12]
    return ((train[keep] - mu[keep]) / sd[keep]).to_numpy(float), \
        ((valid[keep] - mu[keep]) / sd[keep]).to_numpy(float), list(keep)


def _scores(train_X, train_y, valid_X):
    fit = fit_logistic(train_X, train_y)
    return fit.predict(valid_X), fit.separable


def validate_marker(train_records: pd.DataFrame, valid_records: pd.DataFrame,
                    train_series: pd.DataFrame, valid_series: pd.DataFrame,
                    marker: str, covariates=()) -> ValidationResult:
    """Train on one split, score the other, compare against demographics only.

    Records are indexed by record id and carry ``case``, ``stratum`` and the
    covariate columns; series are one marker's windowed rows.
    """
    overlap = set(train_records["stratum"]) & set(valid_records["stratum"])
    if overlap:
        raise InvalidInputError(f"train and validation share strata: {sorted(overlap)[:3]}")
    assert not set(train_records.index) & set(valid_records.index)
    covariates = list(covariates)
    y_train = train_records["case"].to_numpy(int)
    y_valid = valid_records["case"].to_numpy(int)

    blup = fit_blup_model(train_series, train_records, covariates)
    f_train = build_features(train_series, train_records, marker, blup)
    f_valid = build_features(valid_series, valid_records, marker, blup)

    demo_train, demo_valid = train_records[covariates], valid_records[covariates]
    Xb_t, Xb_v, _ = _standardize(demo_train, demo_valid)
    Xa_t, Xa_v, _ = _standardize(pd.concat([demo_train, f_train], axis=1),
                                 pd.concat([demo_valid, f_valid], axis=1))
    base, sep_b = _scores(Xb_t, y_train, Xb_v)
    aug, sep_a = _scores(Xa_t, y_train, Xa_v)
    c_base = c_statistic(base, y_valid).c
    roc = c_statistic(aug, y_valid)
    p = compare_auc(base, aug, y_valid)
    return ValidationResult(marker, c_base, roc.c, p, roc.n_cases, roc.n_controls,
                            bool(sep_b or sep_a))


def baseline_c(train_records, valid_records, covariates=()) -> float:
    covariates = list(covariates)
    Xt, Xv, _ = _standardize(train_records[covariates], valid_records[covariates])
    scores, _ = _scores(Xt, train_records["case"].to_numpy(int), Xv)
    return c_statistic(scores, valid_records["case"].to_numpy(int)).c
