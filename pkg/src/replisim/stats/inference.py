"""Two-group tests, ANOVA and the chi-squared test of independence.

All p-values are two-sided.  Direction is reported separately through
``direction_sign``, the sign of the planned contrast (first/higher group
minus second/lower group).  When the governing error variance is exactly
zero the functions return an :class:`InsufficientVariance` marker instead of
a test result.
"""
from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .distributions import chi2_sf, f_sf, t_two_sided_p
from .ols import residual_ss, effect_coded
from .results import (
    CellSummary,
    DegenerateTable,
    EffectSize,
    EmptyCell,
    InsufficientVariance,
    TestResult,
    TooFewSamples,
)


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _as_sample(x: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"sample {name!r} contains non-finite values")
    if arr.size < 2:
        raise TooFewSamples(f"sample {name!r} needs at least 2 observations, got {arr.size}")
    return arr


def _constant(arr: np.ndarray) -> bool:
    # zero sum of squares as computed, which also catches spreads that underflow
    return float(np.sum((arr - arr.mean()) ** 2)) == 0.0


def _summary(arr: np.ndarray) -> CellSummary:
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return CellSummary(mean=float(np.mean(arr)), sd=sd, n=int(arr.size))


def _pooled_sd(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = a.size, b.size
    ss = np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)
    return math.sqrt(ss / (na + nb - 2))


def cohen_d(a: Sequence[float], b: Sequence[float]) -> EffectSize:
    """Standardized mean difference (mean(a) - mean(b)) / pooled sd."""
    a = _as_sample(a, "a")
    b = _as_sample(b, "b")
    diff = float(a.mean() - b.mean())
    sp = _pooled_sd(a, b)
    if sp == 0.0:
        if diff == 0.0:
            return EffectSize("cohen_d", 0.0)
        return EffectSize("cohen_d", math.copysign(math.inf, diff))
    return EffectSize("cohen_d", diff / sp)


def _two_group(a, b, labels, kind):
    a = _as_sample(a, labels[0])
    b = _as_sample(b, labels[1])
    cells = {labels[0]: _summary(a), labels[1]: _summary(b)}
    diff = float(a.mean() - b.mean())
    if _constant(a) and _constant(b):
        return a, b, cells, diff, InsufficientVariance(
            test_kind=kind,
            zero_variance_cells=tuple(labels),
            difference_sign=_sign(diff),
            cell_summaries=cells,
        )
    return a, b, cells, diff, None


def welch_t_test(
    a: Sequence[float], b: Sequence[float], labels: tuple[str, str] = ("a", "b")
) -> TestResult | InsufficientVariance:
    """Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom."""
    a, b, cells, diff, marker = _two_group(a, b, labels, "welch_t")
    if marker is not None:
        return marker
    va = float(np.var(a, ddof=1)) / a.size
    vb = float(np.var(b, ddof=1)) / b.size
    se = math.sqrt(va + vb)
    t = diff / se
    # Welch-Satterthwaite in terms of the variance share, which cannot underflow
    w = va / (va + vb)
    df = 1.0 / (w**2 / (a.size - 1) + (1.0 - w) ** 2 / (b.size - 1))
    return TestResult(
        test_kind="welch_t",
        statistic=t,
        df=(df,),
        p=t_two_sided_p(t, df),
        direction_sign=_sign(diff),
        effect_size=cohen_d(a, b),
        cell_summaries=cells,
    )


def student_t_test(
    a: Sequence[float], b: Sequence[float], labels: tuple[str, str] = ("a", "b")
) -> TestResult | InsufficientVariance:
    """Pooled-variance two-sample t-test."""
    a, b, cells, diff, marker = _two_group(a, b, labels, "student_t")
    if marker is not None:
        return marker
    sp = _pooled_sd(a, b)
    t = diff / (sp * math.sqrt(1.0 / a.size + 1.0 / b.size))
    df = float(a.size + b.size - 2)
    return TestResult(
        test_kind="student_t",
        statistic=t,
        df=(df,),
        p=t_two_sided_p(t, df),
        direction_sign=_sign(diff),
        effect_size=EffectSize("cohen_d", diff / sp),
        cell_summaries=cells,
    )


def one_way_anova(
    groups: Sequence[Sequence[float]],
    labels: Sequence[str] | None = None,
    contrast: tuple[int, int] | None = None,
) -> TestResult | InsufficientVariance:
    """One-way between-subjects ANOVA.

    Args:
        groups: at least two samples of at least two observations each.
        labels: cell names used in ``cell_summaries``.
        contrast: ``(higher, lower)`` group indices defining ``direction_sign``.
            Defaults to ``(0, 1)``.
    """
    if len(groups) < 2:
        raise TooFewSamples(f"one-way ANOVA needs at least 2 groups, got {len(groups)}")
    labels = list(labels) if labels is not None else [f"g{i}" for i in range(len(groups))]
    arrs = [_as_sample(g, lab) for g, lab in zip(groups, labels)]
    cells = {lab: _summary(g) for lab, g in zip(labels, arrs)}
    hi, lo = contrast if contrast is not None else (0, 1)
    sign = _sign(float(arrs[hi].mean() - arrs[lo].mean()))

    if all(_constant(g) for g in arrs):
        return InsufficientVariance("anova1", tuple(labels), sign, cells)

    allv = np.concatenate(arrs)
    grand = allv.mean()
    ss_between = float(sum(g.size * (g.mean() - grand) ** 2 for g in arrs))
    ss_within = float(sum(np.sum((g - g.mean()) ** 2) for g in arrs))
    df1 = float(len(arrs) - 1)
    df2 = float(allv.size - len(arrs))
    f = (ss_between / df1) / (ss_within / df2)
    return TestResult(
        test_kind="anova1",
        statistic=f,
        df=(df1, df2),
        p=f_sf(f, df1, df2),
        direction_sign=sign,
        effect_size=EffectSize("eta_squared_partial", ss_between / (ss_between + ss_within)),
        cell_summaries=cells,
    )


def two_way_anova(
    y: Sequence[float],
    factor_a: Sequence[str],
    factor_b: Sequence[str],
    contrast_a: tuple[str, str] | None = None,
    contrast_b: tuple[str, str] | None = None,
) -> dict[str, TestResult | InsufficientVariance]:
    """Two-way between-subjects ANOVA with Type II sums of squares.

    The model is fit by least squares on an effect-coded design with the
    full interaction.  ``contrast_a``/``contrast_b`` name the
    ``(higher, lower)`` levels used for direction signs; the interaction
    sign is that of the difference-of-differences
    ``(A_hi - A_lo | B_hi) - (A_hi - A_lo | B_lo)``.

    Returns:
        mapping with keys ``"A"``, ``"B"`` and ``"AB"``.

    Raises:
        EmptyCell: some combination of levels has no observations.
        RankDeficient: the design cannot be estimated.
    """
    yv = np.asarray(y, dtype=float).ravel()
    fa = np.asarray(factor_a, dtype=object).ravel()
    fb = np.asarray(factor_b, dtype=object).ravel()
    if not (yv.size == fa.size == fb.size):
        raise ValueError("y, factor_a and factor_b must have equal length")
    levels_a = sorted(set(fa.tolist()))
    levels_b = sorted(set(fb.tolist()))
    if len(levels_a) < 2 or len(levels_b) < 2:
        raise TooFewSamples("each factor needs at least 2 observed levels")

    cells: dict[str, CellSummary] = {}
    cell_data: dict[tuple[str, str], np.ndarray] = {}
    for la in levels_a:
        for lb in levels_b:
            vals = yv[(fa == la) & (fb == lb)]
            if vals.size == 0:
                raise EmptyCell(f"no observations in cell ({la}, {lb})")
            cell_data[la, lb] = vals
            cells[f"{la}|{lb}"] = _summary(vals)

    ca = contrast_a or (levels_a[0], levels_a[1])
    cb = contrast_b or (levels_b[0], levels_b[1])

    def marg(mask):
        return float(yv[mask].mean())

    sign_a = _sign(marg(fa == ca[0]) - marg(fa == ca[1]))
    sign_b = _sign(marg(fb == cb[0]) - marg(fb == cb[1]))
    m = {k: float(v.mean()) for k, v in cell_data.items()}
    sign_ab = _sign((m[ca[0], cb[0]] - m[ca[1], cb[0]]) - (m[ca[0], cb[1]] - m[ca[1], cb[1]]))

    if all(_constant(v) for v in cell_data.values()):
        zero = tuple(cells)
        return {
            "A": InsufficientVariance("anova2", zero, sign_a, cells, "A"),
            "B": InsufficientVariance("anova2", zero, sign_b, cells, "B"),
            "AB": InsufficientVariance("anova2", zero, sign_ab, cells, "AB"),
        }

    xa = effect_coded(fa, levels_a)
    xb = effect_coded(fb, levels_b)
    xab = np.column_stack([xa[:, i] * xb[:, j] for i in range(xa.shape[1]) for j in range(xb.shape[1])])
    one = np.ones((yv.size, 1))

    n_cells = len(levels_a) * len(levels_b)
    df_error = float(yv.size - n_cells)
    if df_error <= 0:
        raise TooFewSamples("two-way ANOVA needs more observations than cells")
    # exact within-cell SS, identical to the residual SS of the saturated model
    sse = float(sum(np.sum((v - v.mean()) ** 2) for v in cell_data.values()))
    rss_a = residual_ss(np.hstack([one, xa]), yv)
    rss_b = residual_ss(np.hstack([one, xb]), yv)
    rss_ab = residual_ss(np.hstack([one, xa, xb]), yv)

    terms = {
        "A": (max(rss_b - rss_ab, 0.0), float(len(levels_a) - 1), sign_a),
        "B": (max(rss_a - rss_ab, 0.0), float(len(levels_b) - 1), sign_b),
        "AB": (max(rss_ab - sse, 0.0), float(xab.shape[1]), sign_ab),
    }
    mse = sse / df_error
    out: dict[str, TestResult | InsufficientVariance] = {}
    for name, (ss, df1, sign) in terms.items():
        f = (ss / df1) / mse
        out[name] = TestResult(
            test_kind="anova2",
            statistic=f,
            df=(df1, df_error),
            p=f_sf(f, df1, df_error),
            direction_sign=sign,
            effect_size=EffectSize("eta_squared_partial", ss / (ss + sse)),
            cell_summaries=cells,
            term=name,
        )
    return out


def chi_square_independence(
    table: Sequence[Sequence[float]],
    contrast: tuple[int, int, int] | None = None,
) -> TestResult:
    """Pearson chi-squared test of independence on an r x c contingency table.

    ``contrast = (row_hi, row_lo, col)`` defines ``direction_sign`` as the sign
    of P(col | row_hi) - P(col | row_lo); defaults to ``(0, 1, 0)``.
    """
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise DegenerateTable(f"need at least a 2x2 table, got shape {obs.shape}")
    if np.any(obs < 0):
        raise DegenerateTable("counts must be non-negative")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise DegenerateTable("every row and column total must be positive")
    total = obs.sum()
    expected = np.outer(rows, cols) / total
    stat = float(np.sum((obs - expected) ** 2 / expected))
    df = float((obs.shape[0] - 1) * (obs.shape[1] - 1))
    r_hi, r_lo, col = contrast if contrast is not None else (0, 1, 0)
    sign = _sign(float(obs[r_hi, col] / rows[r_hi] - obs[r_lo, col] / rows[r_lo]))
    v = math.sqrt(stat / (total * (min(obs.shape) - 1)))
    return TestResult(
        test_kind="chi2",
        statistic=stat,
        df=(df,),
        p=chi2_sf(stat, df),
        direction_sign=sign,
        effect_size=EffectSize("cramers_v", min(v, 1.0)),
        cell_summaries={
            f"row{i}": CellSummary(mean=float(obs[i, col] / rows[i]), sd=0.0, n=int(rows[i]))
            for i in range(obs.shape[0])
        },
    )
