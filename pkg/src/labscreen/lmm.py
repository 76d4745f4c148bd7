"""Random-intercept linear mixed model fitted by maximum likelihood.

Model: ``y_ij = x_ij' beta + b_i + e_ij`` with ``b_i ~ N(0, lam * sigma2)``
and ``e_ij ~ N(0, sigma2)``.  For fixed ``lam`` the per-subject covariance
``sigma2 * (I + lam J)`` has inverse ``I - lam / (1 + lam n_i) J`` and
log-determinant ``log(1 + lam n_i)``, so beta and sigma2 have closed forms
and the likelihood reduces to a one-dimensional profile in ``log(lam)``.

The profile is evaluated from sufficient statistics.  Splitting every
column of ``[X, y]`` into within-subject deviations and subject means gives

    [X, y]' V^-1 [X, y] = W + M' diag(n_i / (1 + lam n_i)) M

where ``W`` is the within-subject cross-product.  ``W`` is reduced once to
its triangular QR factor, after which each profile evaluation is a QR of a
``(p + 1 + G) x (p + 1)`` stack instead of an ``N``-row problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import (
    DomainError,
    InconsistentInputError,
    InvalidInputError,
    MissingCovariateError,
    SingularDesignError,
    UnderdeterminedError,
)
from .spline import WINDOW_DAYS, DesignSpec, design_rows

LOG_LAMBDA_BOUNDS = (-12.0, 12.0)
LOG_LAMBDA_TOL = 1e-8
_LOG_2PI = np.log(2 * np.pi)


@dataclass
class LmmFit:
    beta: np.ndarray
    sigma2: float
    lam: float
    loglik: float
    n_params: int
    cov_beta: np.ndarray
    group_sizes: np.ndarray
    group_labels: np.ndarray
    columns: list = field(default_factory=list)
    n_obs: int = 0

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    @property
    def sigma2_b(self) -> float:
        return self.lam * self.sigma2

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_beta))


@dataclass
class PredictedCurve:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    group: str = ""


def _encode_groups(groups):
    labels, codes = np.unique(np.asarray(groups), return_inverse=True)
    return labels, codes.astype(np.intp), np.bincount(codes, minlength=len(labels))


class _Profile:
    """Precomputed sufficient statistics for profile-likelihood evaluation."""

    def __init__(self, y, X, groups, columns=None):
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InvalidInputError(f"X has shape {X.shape}, y has {y.size} rows")
        if len(groups) != y.size:
            raise InvalidInputError("groups must have one entry per row")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InvalidInputError("y and X must be finite")
        N, p = X.shape
        if N <= p:
            raise UnderdeterminedError(f"{N} rows for {p} fixed effects")
        self.labels, self.codes, self.sizes = _encode_groups(groups)
        if len(self.labels) < 2:
            raise InvalidInputError("need at least two groups")
        self.columns = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
        self.N, self.p = N, p

        scale = np.abs(X).max(axis=0)
        zero = scale == 0
        if zero.any():
            raise SingularDesignError([self.columns[j] for j in np.flatnonzero(zero)])
        self.scale = scale
        Z = np.column_stack([X / scale, y])
        sums = np.column_stack(
            [np.bincount(self.codes, weights=Z[:, j], minlength=len(self.labels))
             for j in range(p + 1)]
        )
        self.means = sums / self.sizes[:, None]
        within = Z - self.means[self.codes]
        self.r_within = np.linalg.qr(within, mode="r")
        self._check_rank()

    def _check_rank(self):
        p = self.p
        stacked = np.vstack([self.r_within[:, :p], np.sqrt(self.sizes)[:, None] * self.means[:, :p]])
        r, piv = linalg.qr(stacked, mode="r", pivoting=True)
        diag = np.abs(np.diag(r))
        tol = max(self.N, p) * np.finfo(float).eps * 10 * diag[0]
        rank = int(np.sum(diag > tol))
        if rank < p:
            raise SingularDesignError([self.columns[j] for j in sorted(piv[rank:])])

    def factor(self, lam: float) -> np.ndarray:
        d = self.sizes / (1.0 + lam * self.sizes)
        stacked = np.vstack([self.r_within, np.sqrt(d)[:, None] * self.means])
        return np.linalg.qr(stacked, mode="r")

    def deviance(self, lam: float) -> float:
        """-2 x profiled log-likelihood at variance ratio ``lam``."""
        r = self.factor(lam)
        rss = r[self.p, self.p] ** 2
        logdet = np.sum(np.log1p(lam * self.sizes))
        return self.N * (_LOG_2PI + np.log(rss / self.N) + 1.0) + logdet

    def solve(self, lam: float):
        p = self.p
        r = self.factor(lam)
        rx = r[:p, :p]
        beta_s = linalg.solve_triangular(rx, r[:p, p])
        sigma2 = r[p, p] ** 2 / self.N
        rinv = linalg.solve_triangular(rx, np.eye(p))
        cov_s = sigma2 * (rinv @ rinv.T)
        beta = beta_s / self.scale
        cov = cov_s / np.outer(self.scale, self.scale)
        return beta, sigma2, 0.5 * (cov + cov.T)


def _search_lambda(profile: _Profile) -> float:
    lo, hi = LOG_LAMBDA_BOUNDS
    grid = np.linspace(lo, hi, int(hi - lo) + 1)
    devs = np.array([profile.deviance(np.exp(g)) for g in grid])
    k = int(np.argmin(devs))
    candidates = [(profile.deviance(0.0), 0.0)]
    candidates += [(d, np.exp(g)) for d, g in zip(devs, grid)]
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda g: profile.deviance(np.exp(g)),
        bounds=(a, b),
        method="bounded",
        options={"xatol": LOG_LAMBDA_TOL},
    )
    candidates.append((float(res.fun), float(np.exp(res.x))))
    # first minimum wins, so lam = 0 is preferred on exact ties
    best = min(range(len(candidates)), key=lambda i: candidates[i][0])
    return candidates[best][1]


def fit_lmm(y, X, groups, columns=None) -> LmmFit:
    """Maximum-likelihood fit of the random-intercept model.

    ``groups`` holds one subject label per row.  Raises
    ``SingularDesignError`` when ``X`` is rank deficient and
    ``UnderdeterminedError`` when there are no more rows than columns.
    """
    profile = _Profile(y, X, groups, columns)
    lam = _search_lambda(profile)
    beta, sigma2, cov = profile.solve(lam)
    loglik = -0.5 * profile.deviance(lam)
    return LmmFit(
        beta=beta,
        sigma2=float(sigma2),
        lam=float(lam),
        loglik=float(loglik),
        n_params=profile.p + 2,
        cov_beta=cov,
        group_sizes=profile.sizes,
        group_labels=profile.labels,
        columns=profile.columns,
        n_obs=profile.N,
    )


def fit_design(design) -> LmmFit:
    return fit_lmm(design.y, design.X, design.groups, design.columns)


def loglik_at(y, X, groups, beta, sigma2, lam) -> float:
    """Exact Gaussian log-likelihood of the random-intercept model."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if not lam >= 0:
        raise DomainError(f"lambda must be non-negative, got {lam}")
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float).reshape(y.size, -1)
    beta = np.asarray(beta, dtype=float).ravel()
    r = y - X @ beta if X.shape[1] else y.copy()
    _, codes, sizes = _encode_groups(groups)
    rsum = np.bincount(codes, weights=r, minlength=len(sizes))
    w = lam / (1.0 + lam * sizes)
    quad = (r @ r - np.sum(w * rsum**2)) / sigma2
    logdet = y.size * np.log(sigma2) + np.sum(np.log1p(lam * sizes))
    return float(-0.5 * (y.size * _LOG_2PI + logdet + quad))


def shrunken_intercepts(residuals, groups, lam):
    """Posterior means of the random intercepts given residuals ``y - X beta``.

    Returns ``(labels, values)`` with labels sorted.
    """
    labels, codes, sizes = _encode_groups(groups)
    rsum = np.bincount(codes, weights=np.asarray(residuals, float), minlength=len(sizes))
    return labels, lam / (1.0 + lam * sizes) * rsum


def blup_intercepts(fit: LmmFit, y, X, groups) -> np.ndarray:
    """Per-subject BLUPs, ordered like ``fit.group_labels``."""
    labels, _, sizes = _encode_groups(groups)
    if len(labels) != len(fit.group_labels) or np.any(sizes != fit.group_sizes) or np.any(
        labels != fit.group_labels
    ):
        raise InconsistentInputError("groups do not match the fitted model")
    r = np.asarray(y, float) - np.asarray(X, float) @ fit.beta
    return shrunken_intercepts(r, groups, fit.lam)[1]


def predict_curve(
    fit: LmmFit,
    spec: DesignSpec,
    group: str,
    covariate_profile: dict | None = None,
    grid=None,
    level: float = 1.96,
    window: float = WINDOW_DAYS,
) -> PredictedCurve:
    """Population curve with pointwise fixed-effects confidence band."""
    if group not in ("case", "control"):
        raise InvalidInputError(f"group must be 'case' or 'control', got {group!r}")
    if list(spec.columns()) != list(fit.columns):
        raise InconsistentInputError("design spec does not match fitted columns")
    covariate_profile = covariate_profile or {}
    missing = [c for c in spec.covariates if c not in covariate_profile]
    if missing:
        raise MissingCovariateError("covariate profile", missing)
    grid = np.arange(-window, 1.0) if grid is None else np.asarray(grid, dtype=float)
    if grid.size and (grid.min() < -window or grid.max() > 0):
        raise InvalidInputError(f"grid must lie in [-{window:g}, 0]")
    cov = np.array([covariate_profile[c] for c in spec.covariates], dtype=float)
    case = 1.0 if group == "case" else 0.0
    rows = design_rows(grid, case, cov, spec)
    mean = rows @ fit.beta
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", rows, fit.cov_beta, rows), 0.0))
    return PredictedCurve(grid, mean, mean - level * se, mean + level * se, group)
