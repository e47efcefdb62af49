"""Regularized incomplete beta function, its inverse, and the normal quantile."""

from __future__ import annotations

import math

_TINY = 1e-300
_EPS = 1e-16
_LOG_2PI = math.log(2.0 * math.pi)


def _stirling_correction(z):
    # log Gamma(z) minus its Stirling approximation, accurate to ~1e-12 for z >= 10
    z2 = z * z
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z


def _log_prefactor(x, a, b):
    """log of x^a (1-x)^b / B(a, b)."""
    if a >= 10.0 and b >= 10.0:
        # written around the mode so large a, b do not cancel catastrophically
        s = a + b
        return (a * math.log1p((x * s - a) / a) + b * math.log1p(((1.0 - x) * s - b) / b)
                + 0.5 * math.log(a * b / s) - 0.5 * _LOG_2PI
                - _stirling_correction(a) - _stirling_correction(b) + _stirling_correction(s))
    return (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
            + a * math.log(x) + b * math.log1p(-x))


def _beta_cf(x, a, b, max_iter=100000):
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        for coef in (m * (b - m) * x / ((qam + m2) * (a + m2)),
                     -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))):
            d = 1.0 + coef * d
            d = 1.0 / (d if abs(d) > _TINY else _TINY)
            c = 1.0 + coef / c
            c = c if abs(c) > _TINY else _TINY
            delta = c * d
            h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(x, a, b):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x > (a + 1.0) / (a + b + 2.0):
        return 1.0 - betainc(1.0 - x, b, a)
    return math.exp(_log_prefactor(x, a, b)) * _beta_cf(x, a, b) / a


def betaincinv(p, a, b, max_iter=200):
    """Smallest x with I_x(a, b) >= p, found by bisection."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if betainc(mid, a, b) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p):
    """Inverse standard normal CDF.

    Rational starting value (Abramowitz and Stegun 26.2.23, error < 4.5e-4)
    followed by Halley steps on the erfc-based CDF.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    # solve in the smaller tail so that p near 1 keeps full relative accuracy
    q = min(p, 1.0 - p)
    t = math.sqrt(-2.0 * math.log(q))
    z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (
        1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t ** 3)
    for _ in range(6):
        # upper tail 1 - Phi(z) is decreasing with derivative -phi(z)
        err = 0.5 * math.erfc(z / math.sqrt(2.0)) - q
        u = -err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
        step = u / (1.0 + 0.5 * z * u)
        z -= step
        if abs(step) < 1e-15 * max(1.0, abs(z)):
            break
    return -z if p < 0.5 else z
