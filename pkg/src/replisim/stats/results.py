from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any


class StatsError(ValueError):
    """Base class for errors raised by the statistics engine."""


class TooFewSamples(StatsError):
    pass


class EmptyCell(StatsError):
    pass


class RankDeficient(StatsError):
    pass


class DegenerateTable(StatsError):
    pass


@dataclass(frozen=True)
class CellSummary:
    mean: float
    sd: float
    n: int


EFFECT_KINDS = ("cohen_d", "eta_squared_partial", "cramers_v")


@dataclass(frozen=True)
class EffectSize:
    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind not in EFFECT_KINDS:
            raise ValueError(f"unknown effect size kind {self.kind!r}")
        if self.kind != "cohen_d" and not 0.0 <= self.value <= 1.0 + 1e-12:
            raise ValueError(f"{self.kind} must lie in [0, 1], got {self.value}")


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test.

    ``direction_sign`` is the sign of the planned contrast estimate (the
    hypothesized-higher cell minus the other); ``p`` is always two-sided.
    """

    __test__ = False  # keep pytest from collecting this class

    test_kind: str
    statistic: float
    df: tuple[float, ...]
    p: float
    direction_sign: int
    effect_size: EffectSize | None = None
    cell_summaries: dict[str, CellSummary] = field(default_factory=dict)
    term: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["df"] = list(self.df)
        out["result"] = "test"
        return out


@dataclass(frozen=True)
class InsufficientVariance:
    """Marker returned instead of a test result when the error variance is exactly zero."""

    test_kind: str
    zero_variance_cells: tuple[str, ...]
    difference_sign: int
    cell_summaries: dict[str, CellSummary] = field(default_factory=dict)
    term: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["zero_variance_cells"] = list(self.zero_variance_cells)
        out["result"] = "insufficient_variance"
        return out


def result_from_dict(data: dict[str, Any]) -> TestResult | InsufficientVariance:
    data = dict(data)
    kind = data.pop("result", "test")
    cells = {k: CellSummary(**v) for k, v in (data.pop("cell_summaries", None) or {}).items()}
    if kind == "insufficient_variance":
        return InsufficientVariance(
            test_kind=data["test_kind"],
            zero_variance_cells=tuple(data["zero_variance_cells"]),
            difference_sign=int(data["difference_sign"]),
            cell_summaries=cells,
            term=data.get("term"),
        )
    es = data.get("effect_size")
    return TestResult(
        test_kind=data["test_kind"],
        statistic=float(data["statistic"]),
        df=tuple(float(d) for d in data["df"]),
        p=float(data["p"]),
        direction_sign=int(data["direction_sign"]),
        effect_size=EffectSize(**es) if es else None,
        cell_summaries=cells,
        term=data.get("term"),
    )
