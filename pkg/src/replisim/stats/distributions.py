"""Tail probabilities for the t, F and chi-squared distributions."""
from __future__ import annotations

import math

from .special import _betainc, reg_incomplete_gamma_upper


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if not df > 0:
        raise ValueError(f"df must be positive, got {df}")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    t2 = t * t
    # I_{df/(df+t^2)}(df/2, 1/2), with both x and 1-x formed without cancellation
    x = df / (df + t2)
    y = t2 / (df + t2)
    return min(1.0, max(0.0, _betainc(df / 2.0, 0.5, x, y)))


def t_cdf(t: float, df: float) -> float:
    p = 0.5 * t_two_sided_p(t, df)
    return 1.0 - p if t > 0 else p


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper-tail probability P(F >= f)."""
    if not (df1 > 0 and df2 > 0):
        raise ValueError(f"degrees of freedom must be positive, got ({df1}, {df2})")
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    x = df2 / (df2 + df1 * f)
    y = df1 * f / (df2 + df1 * f)
    return min(1.0, max(0.0, _betainc(df2 / 2.0, df1 / 2.0, x, y)))


def chi2_sf(x: float, df: float) -> float:
    """Upper-tail probability P(X >= x) for chi-squared with ``df`` degrees of freedom."""
    if not df > 0:
        raise ValueError(f"df must be positive, got {df}")
    if x <= 0:
        return 1.0
    return min(1.0, max(0.0, reg_incomplete_gamma_upper(df / 2.0, x / 2.0)))

