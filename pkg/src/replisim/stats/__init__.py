"""Special functions, hypothesis tests and effect sizes, implemented on numpy."""
from .distributions import chi2_sf, f_sf, t_two_sided_p
from .inference import (
    chi_square_independence,
    cohen_d,
    one_way_anova,
    student_t_test,
    two_way_anova,
    welch_t_test,
)
from .ols import OLSFit, ols_fit
from .results import (
    CellSummary,
    DegenerateTable,
    EffectSize,
    EmptyCell,
    InsufficientVariance,
    RankDeficient,
    StatsError,
    TestResult,
    TooFewSamples,
    result_from_dict,
)
from .special import (
    DomainError,
    reg_incomplete_beta,
    reg_incomplete_gamma_lower,
    reg_incomplete_gamma_upper,
)

__all__ = [
    "CellSummary",
    "DegenerateTable",
    "DomainError",
    "EffectSize",
    "EmptyCell",
    "InsufficientVariance",
    "OLSFit",
    "RankDeficient",
    "StatsError",
    "TestResult",
    "TooFewSamples",
    "chi2_sf",
    "chi_square_independence",
    "cohen_d",
    "f_sf",
    "ols_fit",
    "one_way_anova",
    "reg_incomplete_beta",
    "reg_incomplete_gamma_lower",
    "reg_incomplete_gamma_upper",
    "result_from_dict",
    "student_t_test",
    "t_two_sided_p",
    "two_way_anova",
    "welch_t_test",
]
