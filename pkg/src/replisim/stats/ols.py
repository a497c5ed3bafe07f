"""Ordinary least squares via a QR factorization."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .distributions import t_two_sided_p
from .results import RankDeficient, TooFewSamples


@dataclass(frozen=True)
class Coefficient:
    estimate: float
    se: float
    t: float
    p: float


@dataclass(frozen=True)
class OLSFit:
    coefficients: tuple[Coefficient, ...]
    df_resid: int
    rss: float
    sigma2: float
    r_squared: float

    @property
    def estimates(self) -> np.ndarray:
        return np.array([c.estimate for c in self.coefficients])


def _qr(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(x, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= max(x.shape) * np.finfo(float).eps * diag.max():
        raise RankDeficient(f"design matrix of shape {x.shape} is not of full column rank")
    return q, r


def ols_fit(design: np.ndarray | Sequence[Sequence[float]], y: Sequence[float]) -> OLSFit:
    """Fit ``y ~ design`` (no intercept is added; include a column of ones if wanted).

    Raises:
        TooFewSamples: rows <= columns.
        RankDeficient: design not of full column rank.
    """
    x = np.asarray(design, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    yv = np.asarray(y, dtype=float).ravel()
    n, k = x.shape
    if yv.size != n:
        raise ValueError(f"design has {n} rows but y has {yv.size} entries")
    if n <= k:
        raise TooFewSamples(f"need more rows than columns, got {n}x{k}")
    q, r = _qr(x)
    beta = np.linalg.solve(r, q.T @ yv)
    resid = yv - x @ beta
    rss = float(resid @ resid)
    df = n - k
    sigma2 = rss / df
    r_inv = np.linalg.solve(r, np.eye(k))
    cov_diag = np.sum(r_inv**2, axis=1) * sigma2
    coefs = []
    for b, v in zip(beta, cov_diag):
        se = float(np.sqrt(v))
        if se > 0:
            t = float(b) / se
            p = t_two_sided_p(t, df)
        else:
            t = float("inf") if b != 0 else 0.0
            p = 0.0 if b != 0 else 1.0
        coefs.append(Coefficient(float(b), se, t, p))
    tss = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return OLSFit(tuple(coefs), df, rss, sigma2, r2)


def residual_ss(design: np.ndarray, y: np.ndarray) -> float:
    q, _ = _qr(np.asarray(design, dtype=float))
    yv = np.asarray(y, dtype=float)
    fitted = q @ (q.T @ yv)
    resid = yv - fitted
    return float(resid @ resid)


def effect_coded(labels: Sequence[str], levels: Sequence[str]) -> np.ndarray:
    """Sum-to-zero coding: one column per level but the last, which is coded -1 throughout."""
    labels = np.asarray(labels, dtype=object)
    out = np.zeros((labels.size, len(levels) - 1))
    for j, lev in enumerate(levels[:-1]):
        out[labels == lev, j] = 1.0
    out[labels == levels[-1], :] = -1.0
    return out
