"""Shared oracles and small data builders for the test suite."""

import numpy as np
import pandas as pd
import pytest
from scipy import optimize, stats


def dense_cov(groups, sigma2, lam):
    """Explicit N x N covariance sigma2 * (I + lam * same-subject indicator)."""
    g = np.asarray(groups)
    same = (g[:, None] == g[None, :]).astype(float)
    return sigma2 * (np.eye(g.size) + lam * same)


def dense_loglik(y, X, groups, beta, sigma2, lam):
    mean = X @ beta if X.shape[1] else np.zeros_like(y)
    return stats.multivariate_normal(mean, dense_cov(groups, sigma2, lam)).logpdf(y)


def dense_gls(y, X, groups, lam):
    """Profiled ML estimates at fixed lambda via the explicit covariance."""
    V = dense_cov(groups, 1.0, lam)
    Vi = np.linalg.inv(V)
    A = X.T @ Vi @ X
    beta = np.linalg.solve(A, X.T @ Vi @ y)
    r = y - X @ beta
    sigma2 = (r @ Vi @ r) / y.size
    return beta, sigma2, sigma2 * np.linalg.inv(A)


def dense_fit(y, X, groups):
    """Brute-force ML: dense profile over a fine log-lambda grid, then polish.

    Returns (loglik, beta, sigma2, lam) maximizing over lambda >= 0.
    """
    def negll(loglam):
        lam = np.exp(loglam)
        beta, s2, _ = dense_gls(y, X, groups, lam)
        return -dense_loglik(y, X, groups, beta, s2, lam)

    grid = np.linspace(-14, 14, 113)
    vals = np.array([negll(v) for v in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    candidates = [(res.fun, np.exp(res.x))]
    b0, s0, _ = dense_gls(y, X, groups, 0.0)
    candidates.append((-dense_loglik(y, X, groups, b0, s0, 0.0), 0.0))
    best_neg, lam = min(candidates)
    beta, s2, _ = dense_gls(y, X, groups, lam)
    return -best_neg, beta, s2, lam


def simulate_lmm(rng, n_groups, n_per, beta, sigma2=1.0, sigma2_b=1.0, p_extra=0):
    sizes = np.full(n_groups, n_per) if np.isscalar(n_per) else np.asarray(n_per)
    groups = np.repeat(np.arange(sizes.size), sizes)
    n = groups.size
    X = np.column_stack([np.ones(n), rng.normal(size=(n, len(beta) - 1 + p_extra))])
    b = np.r_[beta, np.zeros(p_extra)]
    y = X @ b + np.sqrt(sigma2_b) * rng.normal(size=sizes.size)[groups] \
        + np.sqrt(sigma2) * rng.normal(size=n)
    return y, X, groups


def marker_frame(rng, n_per_side=100, case_curve=None, control_curve=None, slope=0.004,
                 obs_per_subject=(4, 9), noise=1.0, intercept_sd=0.5, covariate=False):
    """Long-format marker data with irregular times in [-180, 0].

    ``case_curve`` / ``control_curve`` are callables adding a departure to
    the linear trend of that group.
    """
    rows = []
    for case in (1, 0):
        curve = case_curve if case else control_curve
        for i in range(n_per_side):
            k = rng.integers(*obs_per_subject, endpoint=True)
            t = np.sort(rng.uniform(-180, 0, k)).round()
            mu = 5.0 + slope * t + intercept_sd * rng.normal()
            if curve is not None:
                mu = mu + curve(t)
            y = mu + noise * rng.normal(size=k)
            rec = f"{'c' if case else 'k'}{i:04d}"
            row = pd.DataFrame({"record": rec, "t": t, "value": y, "case": case})
            if covariate:
                row["age"] = rng.normal(75, 5)
            rows.append(row)
    return pd.concat(rows, ignore_index=True)


def cubic_drop(onset, amplitude):
    return lambda t: -amplitude * np.clip((t + onset) / onset, 0, None) ** 3


def _pow_int(x, n):
    # integer power by binary exponentiation, as the reference language does it
    xn = 1.0
    while True:
        if n & 1:
            xn *= x
        n >>= 1
        if not n:
            return xn
        x *= x


def reference_tps(X, knots):
    """Line-by-line transcription of the published reference routine."""
    X = list(X)
    k = len(knots)
    b = [[None] * (k + 1) for _ in X]
    for r, x in enumerate(X):
        b[r][0] = x
    for i in range(k):
        for r, x in enumerate(X):
            tp = _pow_int(x - knots[i], 3)
            b[r][i + 1] = tp if tp > 0 else 0
    return np.array(b, dtype=float)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
