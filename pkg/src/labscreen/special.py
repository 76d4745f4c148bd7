"""Regularized incomplete gamma function and chi-square tail."""

import math

from .errors import DomainError

_EPS = 1e-16
_MAX_ITER = 10_000
_TINY = 1e-300


def _series_lower(a, x):
    # P(a, x) = exp(-x) x^a / Gamma(a + 1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _cf_upper(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) for a > 0, x >= 0."""
    if not a > 0:
        raise DomainError(f"shape must be positive, got {a}")
    if not x >= 0:
        raise DomainError(f"x must be non-negative, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _series_lower(a, x))
    return min(1.0, _cf_upper(a, x))


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if not df > 0:
        raise DomainError(f"degrees of freedom must be positive, got {df}")
    if not x >= 0:
        raise DomainError(f"chi-square statistic must be non-negative, got {x}")
    return gammaincc(0.5 * df, 0.5 * x)
