"""Regularized incomplete beta and gamma functions.

Both kernels use the modified Lentz continued-fraction evaluation, with a
power series for the lower incomplete gamma when ``x < s + 1``.  They back
every p-value computed in :mod:`replisim.stats.distributions`.
"""
from __future__ import annotations

import math

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 20000


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _stirling_remainder(z: float) -> float:
    """lgamma(z) minus its Stirling approximation."""
    if z >= 10.0:
        z2 = 1.0 / (z * z)
        return (1.0 / 12.0 - z2 * (1.0 / 360.0 - z2 * (1.0 / 1260.0 - z2 / 1680.0))) / z
    return math.lgamma(z) - ((z - 0.5) * math.log(z) - z + _HALF_LOG_2PI)


def _scaled_log(a: float, x: float, r: float, ab: float) -> float:
    # a * log(x * ab / a), where r = x * ab / a - 1 is known to full precision
    if abs(r) < 0.5:
        return a * math.log1p(r)
    return a * (math.log(x) + math.log(ab) - math.log(a))


def _log_beta_front(a: float, b: float, x: float, y: float) -> float:
    # log(x^a y^b / B(a, b)); log1p keeps the terms exact near the mode x = a/(a+b)
    t = x * b - y * a
    return (
        _scaled_log(a, x, t / a, a + b)
        + _scaled_log(b, y, -t / b, a + b)
        + 0.5 * (math.log(a) + math.log(b) - math.log(a + b))
        - _HALF_LOG_2PI
        - _stirling_remainder(a)
        - _stirling_remainder(b)
        + _stirling_remainder(a + b)
    )


def _log_gamma_front(s: float, x: float) -> float:
    # log(x^s e^-x / Gamma(s))
    t = (x - s) / s
    if abs(t) < 0.5:
        core = s * (math.log1p(t) - t)
    else:
        core = s * (math.log(x) - math.log(s)) - (x - s)
    return core + 0.5 * math.log(s) - _HALF_LOG_2PI - _stirling_remainder(s)


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), converging fast for x < (a+1)/(a+b+2)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _betainc(a: float, b: float, x: float, y: float) -> float:
    # y == 1 - x, supplied separately so callers can avoid cancellation
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return 1.0
    log_front = _log_beta_front(a, b, x, y)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, y) / b


def reg_incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Args:
        x: Evaluation point in [0, 1].
        a: First shape parameter, > 0.
        b: Second shape parameter, > 0.

    Raises:
        DomainError: if any argument lies outside its domain.
    """
    if not (a > 0 and b > 0):
        raise DomainError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    return _betainc(a, b, x, 1.0 - x)


def reg_incomplete_beta_upper(x: float, a: float, b: float, y: float | None = None) -> float:
    """Complement 1 - I_x(a, b), evaluated without forming the difference.

    ``y`` may carry an exact value of ``1 - x`` when the caller has one.
    """
    if y is None:
        y = 1.0 - x
    if not (a > 0 and b > 0):
        raise DomainError(f"shape parameters must be positive, got a={a}, b={b}")
    return _betainc(b, a, y, x)


def _gamma_series(s: float, x: float) -> float:
    term = 1.0 / s
    total = term
    ap = s
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(_log_gamma_front(s, x))
    raise ArithmeticError(f"incomplete gamma series did not converge (s={s}, x={x})")


def _gamma_cf(s: float, x: float) -> float:
    """Upper regularized Q(s, x) by continued fraction, for x >= s + 1."""
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
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
            return math.exp(_log_gamma_front(s, x)) * h
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (s={s}, x={x})")


def _check_gamma(s: float, x: float) -> None:
    if not s > 0:
        raise DomainError(f"s must be positive, got {s}")
    if not x >= 0:
        raise DomainError(f"x must be non-negative, got {x}")


def reg_incomplete_gamma_lower(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x)."""
    _check_gamma(s, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        return _gamma_series(s, x)
    return 1.0 - _gamma_cf(s, x)


def reg_incomplete_gamma_upper(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) = 1 - P(s, x)."""
    _check_gamma(s, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < s + 1.0:
        return 1.0 - _gamma_series(s, x)
    return _gamma_cf(s, x)
