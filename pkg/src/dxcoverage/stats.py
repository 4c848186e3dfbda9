"""Simple linear regression with a Student-t test on the slope.

The t tail comes from the regularized incomplete beta function, evaluated
with a Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXIT = 10_000


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    return _betainc(a, b, x, 1.0 - x)


def _betainc(a: float, b: float, x: float, y: float) -> float:
    # y = 1 - x, passed separately so callers can supply it without cancellation
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(y))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    t2 = t * t
    return _betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


def t_cdf(t: float, df: float) -> float:
    half = 0.5 * t_two_sided_p(t, df)
    return 1.0 - half if t > 0 else half


def t_quantile(q: float, df: float, tol: float = 1e-12) -> float:
    """Inverse of :func:`t_cdf` by bisection."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_quantile(1.0 - q, df, tol)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < q:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class SlopeFit:
    beta_D: float
    beta_M: float
    std_err: float
    t_value: float
    p_value: float
    n_points: int

    def confidence_interval(self, level: float = 0.95) -> tuple[float, float]:
        half = t_quantile(0.5 + level / 2.0, self.n_points - 2) * self.std_err
        return self.beta_D - half, self.beta_D + half


def fit_slope(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """Ordinary least squares y = beta_D * x + beta_M with a t test on beta_D.

    When the residuals vanish the standard error is 0; the t value is then
    +-inf with p = 0, or 0 with p = 1 for a flat line.
    """
    n = len(points)
    if n < 3:
        raise ValueError("need at least 3 points")
    xs = [float(x) for x, _ in points]
    ys = [float(y) for _, y in points]
    xbar = math.fsum(xs) / n
    ybar = math.fsum(ys) / n
    sxx = math.fsum((x - xbar) ** 2 for x in xs)
    if sxx == 0.0 or len(set(xs)) < 2:
        raise ValueError("need at least two distinct x values")
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    beta = sxy / sxx
    intercept = ybar - beta * xbar
    ssr = math.fsum((y - (intercept + beta * x)) ** 2 for x, y in zip(xs, ys))
    df = n - 2
    se = math.sqrt(ssr / df / sxx)
    if se == 0.0:
        t = 0.0 if beta == 0.0 else math.copysign(math.inf, beta)
    else:
        t = beta / se
    return SlopeFit(beta, intercept, se, t, t_two_sided_p(t, df), n)
