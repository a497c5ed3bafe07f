"""Run each planned finding's test against an analysis dataset."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .orchestrator import AnalysisDataset, ManipulationCheckResult, apply_manipulation_check
from .stats import (
    DegenerateTable,
    EffectSize,
    InsufficientVariance,
    StatsError,
    TestResult,
    chi_square_independence,
    one_way_anova,
    ols_fit,
    result_from_dict,
    student_t_test,
    two_way_anova,
    welch_t_test,
)
from .study import FindingPlan, StudySpec


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _rows_with(dataset: AnalysisDataset, dv: str) -> list[dict[str, Any]]:
    if dv not in dataset.measure_ids:
        raise KeyError(f"dataset has no column {dv!r}")
    return [r for r in dataset.rows if r["values"].get(dv) is not None]


def _levels(study: StudySpec, row: dict[str, Any]) -> dict[str, str]:
    return study.condition(row["condition"]).level_assignment


def _other_factor(study: StudySpec, name: str) -> str:
    for f in study.factors:
        if f.name != name:
            return f.name
    raise StatsError(f"no second factor to cross with {name!r}")


def _ols_finding(study: StudySpec, plan: FindingPlan, rows: list[dict[str, Any]]) -> TestResult:
    """Indicator-coded regression on the planned contrast cells.

    Main effects regress the DV on ``1[factor == higher]`` over rows at the
    two contrasted levels.  Interactions restrict to the 2x2 block named by
    the direction and moderator contrasts and test the product term, whose
    coefficient is the difference of differences.
    """
    d = plan.direction
    y, cols = [], []
    if plan.effect.kind == "interaction":
        m = d.moderator
        for r in rows:
            lv = _levels(study, r)
            if lv.get(d.factor) in (d.higher, d.lower) and lv.get(m.factor) in (m.higher, m.lower):
                a = float(lv[d.factor] == d.higher)
                b = float(lv[m.factor] == m.higher)
                y.append(float(r["values"][plan.dv]))
                cols.append((1.0, a, b, a * b))
        term = "AB"
    else:
        for r in rows:
            lv = _levels(study, r)
            if lv.get(d.factor) in (d.higher, d.lower):
                y.append(float(r["values"][plan.dv]))
                cols.append((1.0, float(lv[d.factor] == d.higher)))
        term = "A"
    fit = ols_fit(np.array(cols), y)
    coef = fit.coefficients[-1]
    return TestResult(
        test_kind="ols",
        statistic=coef.t,
        df=(float(fit.df_resid),),
        p=coef.p,
        direction_sign=_sign(coef.estimate),
        effect_size=None,
        cell_summaries={},
        term=term,
    )


def analyze_finding(dataset: AnalysisDataset, study: StudySpec, plan: FindingPlan) -> TestResult | InsufficientVariance:
    """Apply ``plan.test`` to the rows answering ``plan.dv``.

    Raises:
        KeyError: the dataset lacks the DV column.
        StatsError: the test cannot be computed (too few samples, empty cell,
            degenerate table, rank deficiency).
    """
    rows = _rows_with(dataset, plan.dv)
    d = plan.direction
    test = plan.test
    if test == "ols":
        return _ols_finding(study, plan, rows)
    if test in ("welch_t", "student_t"):
        hi = [float(r["values"][plan.dv]) for r in rows if _levels(study, r).get(d.factor) == d.higher]
        lo = [float(r["values"][plan.dv]) for r in rows if _levels(study, r).get(d.factor) == d.lower]
        fn = welch_t_test if test == "welch_t" else student_t_test
        return fn(hi, lo, labels=(d.higher, d.lower))
    if test == "anova1":
        levels = list(study.factor(d.factor).levels)
        groups = [[float(r["values"][plan.dv]) for r in rows if _levels(study, r).get(d.factor) == lev] for lev in levels]
        return one_way_anova(groups, labels=levels, contrast=(levels.index(d.higher), levels.index(d.lower)))
    if test == "anova2":
        if plan.effect.kind == "interaction":
            fa, fb = d.factor, d.moderator.factor
            cb = (d.moderator.higher, d.moderator.lower)
        else:
            fa, fb = d.factor, _other_factor(study, d.factor)
            cb = None
        y = [float(r["values"][plan.dv]) for r in rows]
        la = [_levels(study, r)[fa] for r in rows]
        lb = [_levels(study, r)[fb] for r in rows]
        out = two_way_anova(y, la, lb, contrast_a=(d.higher, d.lower), contrast_b=cb)
        return out["AB" if plan.effect.kind == "interaction" else "A"]
    if test == "chi2":
        options = list(study.measure(plan.dv).response.options)
        levels = list(study.factor(d.factor).levels)
        order = [d.higher, d.lower] + [lev for lev in levels if lev not in (d.higher, d.lower)]
        counts = np.zeros((len(order), len(options)))
        for r in rows:
            lev = _levels(study, r).get(d.factor)
            if lev in order:
                counts[order.index(lev), options.index(r["values"][plan.dv])] += 1
        target = options.index(d.option) if d.option is not None else 0
        if counts[:, target].sum() == 0:
            raise DegenerateTable(f"no persona chose the contrasted option {options[target]!r}")
        # options nobody chose carry no information; drop them instead of failing
        keep = [j for j in range(len(options)) if counts[:, j].sum() > 0]
        return chi_square_independence(counts[:, keep], contrast=(0, 1, keep.index(target)))
    raise StatsError(f"unsupported test {test!r}")


@dataclass(frozen=True)
class FindingAnalysis:
    finding_id: str
    result: TestResult | InsufficientVariance | None
    error: str | None = None
    n_used: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "n_used": self.n_used,
            "error": self.error,
            "result": self.result.to_dict() if self.result is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FindingAnalysis:
        res = data.get("result")
        return cls(data["finding_id"], result_from_dict(res) if res else None, data.get("error"), int(data.get("n_used", 0)))


@dataclass(frozen=True)
class AnalysisReport:
    study_id: str
    findings: tuple[FindingAnalysis, ...]
    manipulation_check: ManipulationCheckResult | None = None
    manipulation_check_error: str | None = None

    @property
    def manipulation_failed(self) -> bool:
        return self.manipulation_check is not None and not self.manipulation_check.passed

    def to_dict(self) -> dict[str, Any]:
        return {
            "study_id": self.study_id,
            "manipulation_check": self.manipulation_check.to_dict() if self.manipulation_check else None,
            "manipulation_check_error": self.manipulation_check_error,
            "findings": [f.to_dict() for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AnalysisReport:
        mc = data.get("manipulation_check")
        mcr = ManipulationCheckResult(bool(mc["passed"]), result_from_dict(mc["result"])) if mc else None
        return cls(
            data["study_id"],
            tuple(FindingAnalysis.from_dict(f) for f in data["findings"]),
            mcr,
            data.get("manipulation_check_error"),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["finding_id", "result", "test_kind", "term", "statistic", "df1", "df2", "p",
                    "direction_sign", "effect_size_kind", "effect_size_value", "n_used", "error"])
        for f in self.findings:
            r = f.result
            if r is None:
                w.writerow([f.finding_id, "error", "", "", "", "", "", "", "", "", "", f.n_used, f.error])
            elif isinstance(r, InsufficientVariance):
                w.writerow([f.finding_id, "insufficient_variance", r.test_kind, r.term or "", "", "", "", "",
                            r.difference_sign, "", "", f.n_used, ""])
            else:
                df = list(r.df) + [""] * (2 - len(r.df))
                es: EffectSize | None = r.effect_size
                w.writerow([f.finding_id, "test", r.test_kind, r.term or "", repr(r.statistic), df[0], df[1],
                            repr(r.p), r.direction_sign, es.kind if es else "", repr(es.value) if es else "",
                            f.n_used, ""])
        return buf.getvalue()


def analyze_study(dataset: AnalysisDataset, study: StudySpec) -> AnalysisReport:
    """Run the manipulation check (if any) and every finding; per-finding errors are recorded, not raised."""
    mc, mc_error = None, None
    if study.manipulation_check is not None:
        try:
            mc = apply_manipulation_check(dataset, study.manipulation_check, study)
        except (StatsError, ValueError) as e:
            mc_error = f"{type(e).__name__}: {e}"
    findings = []
    for plan in study.analysis_plan:
        try:
            n_used = len(_rows_with(dataset, plan.dv))
            findings.append(FindingAnalysis(plan.finding_id, analyze_finding(dataset, study, plan), None, n_used))
        except KeyError as e:
            findings.append(FindingAnalysis(plan.finding_id, None, f"MissingColumn: {e.args[0]}"))
        except StatsError as e:
            findings.append(FindingAnalysis(plan.finding_id, None, f"{type(e).__name__}: {e}", n_used))
    return AnalysisReport(study.study_id, tuple(findings), mc, mc_error)
