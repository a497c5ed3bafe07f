"""Replication verdicts, the recorded-outcome audit, aggregates and binned tables.

A finding replicates when the replication matches the original in both
statistical significance and direction.  Censored p-values such as
``<.001`` are compared through :class:`~replisim.study.PValue` and are never
converted to numbers.
"""
from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

from .stats import InsufficientVariance, TestResult
from .study import FindingRecord, OriginalFinding, PValue


class MissingDirection(ValueError):
    """A verdict needs a direction sign that the inputs do not carry."""


class UnbinnableRow(ValueError):
    pass


class UnknownEffectKind(ValueError):
    pass


@dataclass(frozen=True)
class SignificancePolicy:
    """When a p-value counts as significant.

    ``inclusive`` means ``p <= alpha``; ``exclusive`` means ``p < alpha``.
    """

    alpha: float = 0.05
    original_boundary: str = "inclusive"
    replication_boundary: str = "inclusive"

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for b in (self.original_boundary, self.replication_boundary):
            if b not in ("inclusive", "exclusive"):
                raise ValueError(f"boundary must be 'inclusive' or 'exclusive', got {b!r}")

    @staticmethod
    def _sig(p: PValue, alpha: float, boundary: str) -> bool:
        return p.le(alpha) if boundary == "inclusive" else p.lt(alpha)

    def original_significant(self, p: PValue) -> bool:
        return self._sig(p, self.alpha, self.original_boundary)

    def replication_significant(self, p: PValue) -> bool:
        return self._sig(p, self.alpha, self.replication_boundary)

    @classmethod
    def from_pairs(cls, pairs: Iterable[str]) -> SignificancePolicy:
        """Build from ``key=value`` strings such as ``alpha=0.01``."""
        kwargs: dict[str, Any] = {}
        for pair in pairs:
            key, sep, value = pair.partition("=")
            key = key.strip()
            if not sep or key not in ("alpha", "original_boundary", "replication_boundary", "boundary"):
                raise ValueError(f"bad policy setting {pair!r}")
            if key == "alpha":
                kwargs["alpha"] = float(value)
            elif key == "boundary":
                kwargs["original_boundary"] = kwargs["replication_boundary"] = value.strip()
            else:
                kwargs[key] = value.strip()
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {"alpha": self.alpha, "original_boundary": self.original_boundary,
                "replication_boundary": self.replication_boundary}


@dataclass(frozen=True)
class ManipulationCheckFailed:
    """Replication stand-in for findings of a study whose manipulation check failed."""

    detail: str = ""


MECHANISMS = (
    "sig_sig_same_direction",
    "null_null",
    "sig_missed",
    "spurious_sig",
    "direction_flip",
    "insufficient_variance_resolved",
    "insufficient_variance_unresolved",
    "manipulation_check_failed",
)
REPLICATING_MECHANISMS = frozenset({"sig_sig_same_direction", "null_null", "insufficient_variance_resolved"})


@dataclass(frozen=True)
class ReplicationOutcome:
    finding_id: str
    verdict: str  # replicated | not_replicated
    mechanism: str
    inputs: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        expected = "replicated" if self.mechanism in REPLICATING_MECHANISMS else "not_replicated"
        if self.verdict != expected:
            raise ValueError(f"mechanism {self.mechanism} implies verdict {expected}")

    @property
    def replicated(self) -> bool:
        return self.verdict == "replicated"

    def to_dict(self) -> dict[str, Any]:
        return {"finding_id": self.finding_id, "verdict": self.verdict, "mechanism": self.mechanism, "inputs": self.inputs}


def _outcome(fid: str, mechanism: str, inputs: dict[str, Any]) -> ReplicationOutcome:
    verdict = "replicated" if mechanism in REPLICATING_MECHANISMS else "not_replicated"
    return ReplicationOutcome(fid, verdict, mechanism, inputs)


def classify_evidence(
    original_p: PValue,
    original_sign: int | None,
    *,
    replication_p: PValue | None = None,
    replication_sign: int | None = None,
    insufficient_variance: bool = False,
    manipulation_failed: bool = False,
    policy: SignificancePolicy = SignificancePolicy(),
    finding_id: str = "",
) -> ReplicationOutcome:
    """The verdict rules over plain inputs.

    For insufficient variance ``replication_sign`` is the between-cell
    difference sign.  Otherwise ``replication_p`` is required.
    """
    inputs = {
        "original_p": original_p.to_json(),
        "original_sign": original_sign,
        "replication_p": replication_p.to_json() if replication_p is not None else None,
        "replication_sign": replication_sign,
        "insufficient_variance": insufficient_variance,
        "manipulation_failed": manipulation_failed,
        "policy": policy.to_dict(),
    }
    if manipulation_failed:
        return _outcome(finding_id, "manipulation_check_failed", inputs)
    orig_sig = policy.original_significant(original_p)
    inputs["original_significant"] = orig_sig
    if insufficient_variance:
        if not orig_sig:
            return _outcome(finding_id, "insufficient_variance_resolved", inputs)
        if original_sign is None or replication_sign is None:
            raise MissingDirection(f"{finding_id}: perfect separation needs both direction signs")
        same = replication_sign == original_sign and original_sign != 0
        return _outcome(finding_id, "insufficient_variance_resolved" if same else "insufficient_variance_unresolved", inputs)
    if replication_p is None:
        raise ValueError(f"{finding_id}: replication p-value missing")
    rep_sig = policy.replication_significant(replication_p)
    inputs["replication_significant"] = rep_sig
    if orig_sig:
        if not rep_sig:
            return _outcome(finding_id, "sig_missed", inputs)
        if original_sign is None or replication_sign is None:
            raise MissingDirection(f"{finding_id}: both sides significant but a direction sign is missing")
        same = replication_sign == original_sign and original_sign != 0
        return _outcome(finding_id, "sig_sig_same_direction" if same else "direction_flip", inputs)
    return _outcome(finding_id, "spurious_sig" if rep_sig else "null_null", inputs)


def classify_finding(
    original: OriginalFinding,
    replication: TestResult | InsufficientVariance | ManipulationCheckFailed,
    policy: SignificancePolicy = SignificancePolicy(),
    finding_id: str = "",
) -> ReplicationOutcome:
    """Classify one finding.

    Rules, first match wins: a failed manipulation check never replicates;
    insufficient variance replicates when the original was non-significant
    or when the between-cell difference points the original's way; a
    significant original replicates iff the replication is significant in
    the same direction; a non-significant original replicates iff the
    replication is non-significant too.

    Raises:
        MissingDirection: a direction comparison is needed but a sign is absent.
    """
    common = dict(policy=policy, finding_id=finding_id)
    if isinstance(replication, ManipulationCheckFailed):
        return classify_evidence(original.human_p, original.direction_sign, manipulation_failed=True, **common)
    if isinstance(replication, InsufficientVariance):
        return classify_evidence(original.human_p, original.direction_sign, insufficient_variance=True,
                                 replication_sign=replication.difference_sign, **common)
    if not isinstance(replication, TestResult):
        raise TypeError(f"unsupported replication result {replication!r}")
    return classify_evidence(original.human_p, original.direction_sign, replication_p=PValue.exact(replication.p),
                             replication_sign=replication.direction_sign, **common)


# ---------------------------------------------------------------- audit


@dataclass(frozen=True)
class AuditEntry:
    row: int
    key: str
    effect_kind: str
    human_p: str
    ai_p: str
    recorded: str
    rule_verdict: str
    mechanism: str
    status: str  # agree | direction_inferred | requires_direction_data | rule_inconsistent
    boundary_sensitive: bool = False
    explanation: str = ""

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AuditReport:
    entries: tuple[AuditEntry, ...]
    policy: SignificancePolicy

    @property
    def total(self) -> int:
        return len(self.entries)

    @property
    def agree_count(self) -> int:
        return sum(e.status in ("agree", "direction_inferred") for e in self.entries)

    @property
    def raw_agree_count(self) -> int:
        """Agreement when every direction is assumed to match."""
        return sum(e.status == "agree" for e in self.entries)

    @property
    def discrepancies(self) -> list[AuditEntry]:
        return [e for e in self.entries if e.status in ("requires_direction_data", "rule_inconsistent")]

    @property
    def flagged(self) -> list[AuditEntry]:
        return [e for e in self.entries if e.status != "agree"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy": self.policy.to_dict(),
            "total": self.total,
            "agree": self.agree_count,
            "agree_assuming_matching_directions": self.raw_agree_count,
            "discrepancies": [e.to_dict() for e in self.discrepancies],
            "flagged": [e.to_dict() for e in self.flagged],
            "boundary_sensitive": [e.to_dict() for e in self.entries if e.boundary_sensitive],
        }


def _rule_for_record(rec: FindingRecord, policy: SignificancePolicy) -> ReplicationOutcome:
    o = rec.original
    sign = o.direction_sign if o.direction_sign is not None else 1
    common = dict(policy=policy, finding_id=rec.key)
    if o.note == "na_double_star":
        return classify_evidence(o.human_p, sign, manipulation_failed=True, **common)
    if o.note == "na_star":
        return classify_evidence(o.human_p, sign, insufficient_variance=True, replication_sign=sign, **common)
    return classify_evidence(o.human_p, sign, replication_p=rec.replication_p, replication_sign=sign, **common)


def audit_against_recorded(rows: Sequence[FindingRecord], policy: SignificancePolicy = SignificancePolicy()) -> AuditReport:
    """Compare the verdict rules with the recorded outcome of every row.

    The table carries no replication directions, so matching directions are
    assumed.  Where both sides are significant yet the recorded outcome is
    No, a direction disagreement is the only rule-consistent explanation:
    for interactions (whose shape can differ even when both terms are
    significant) the row is marked ``direction_inferred`` and counts as
    agreeing; for main effects it is marked ``requires_direction_data`` and
    counts as a discrepancy.  Any other disagreement is ``rule_inconsistent``.
    Rows whose verdict flips between inclusive and exclusive boundaries are
    marked ``boundary_sensitive``.
    """
    flipped = SignificancePolicy(
        policy.alpha,
        "exclusive" if policy.original_boundary == "inclusive" else "inclusive",
        "exclusive" if policy.replication_boundary == "inclusive" else "inclusive",
    )
    entries = []
    for rec in rows:
        out = _rule_for_record(rec, policy)
        recorded = (rec.original.recorded_outcome or "").lower()
        rule_yes = out.replicated
        status, why = "agree", ""
        if recorded and (recorded == "yes") != rule_yes:
            if out.mechanism == "sig_sig_same_direction" and recorded == "no":
                if rec.effect_kind == "interaction":
                    status = "direction_inferred"
                    why = "both significant and recorded No: interaction pattern differs from the original"
                else:
                    status = "requires_direction_data"
                    why = "both significant and recorded No: only a direction reversal explains it, which the table cannot confirm"
            else:
                status = "rule_inconsistent"
                why = f"rule gives {out.verdict} ({out.mechanism}) but the recorded outcome is {recorded}"
        sensitive = _rule_for_record(rec, flipped).verdict != out.verdict
        entries.append(AuditEntry(
            row=rec.row,
            key=rec.key,
            effect_kind=rec.effect_kind,
            human_p=str(rec.original.human_p),
            ai_p=str(rec.replication_p) if rec.replication_p is not None else
            {"na_star": "NA*", "na_double_star": "NA**"}.get(rec.original.note or "", ""),
            recorded=recorded,
            rule_verdict=out.verdict,
            mechanism=out.mechanism,
            status=status,
            boundary_sensitive=sensitive,
            explanation=why,
        ))
    return AuditReport(tuple(entries), policy)


# ---------------------------------------------------------------- aggregates


@dataclass(frozen=True)
class Tally:
    replicated: int
    total: int

    @property
    def rate(self) -> float | None:
        return self.replicated / self.total if self.total else None

    def render(self) -> str:
        r = self.rate
        return f"{self.replicated}/{self.total} ({'—' if r is None else f'{100 * r:.1f}%'})"

    def to_dict(self) -> dict[str, Any]:
        return {"replicated": self.replicated, "total": self.total, "rate": self.rate}


class Assessed(Protocol):
    effect_kind: str
    replicated: bool


@dataclass(frozen=True)
class AssessedFinding:
    """A finding with its final verdict, ready for aggregation and binning."""

    key: str
    effect_kind: str
    original: OriginalFinding
    replicated: bool

    @classmethod
    def from_recorded(cls, rec: FindingRecord) -> AssessedFinding:
        return cls(rec.key, rec.effect_kind, rec.original, (rec.original.recorded_outcome or "") == "yes")


def aggregate_outcomes(rows: Iterable[Assessed]) -> dict[str, Tally]:
    counts = {"overall": [0, 0], "main_effects": [0, 0], "interactions": [0, 0]}
    for r in rows:
        group = "interactions" if r.effect_kind == "interaction" else "main_effects"
        for g in ("overall", group):
            counts[g][1] += 1
            counts[g][0] += int(bool(r.replicated))
    return {k: Tally(*v) for k, v in counts.items()}


# ---------------------------------------------------------------- bins


@dataclass(frozen=True)
class Bin:
    label: str
    lower: float
    upper: float
    lower_inclusive: bool = False
    upper_inclusive: bool = True

    def contains(self, x: float) -> bool:
        above = x >= self.lower if self.lower_inclusive else x > self.lower
        below = x <= self.upper if self.upper_inclusive else x < self.upper
        return above and below

    def intersects_below(self, c: float) -> bool:
        """Whether the interval [0, c) shares any point with this bin."""
        return self.lower < c

    @property
    def boundary(self) -> str:
        return ("[" if self.lower_inclusive else "(") + ("]" if self.upper_inclusive else ")")


# The first bin is closed so that exact 0.001 entries sit with the censored "<.001" ones.
DEFAULT_P_BINS = (
    Bin("<0.001", 0.0, 0.001, True, True),
    Bin("(0.001, 0.01]", 0.001, 0.01),
    Bin("(0.01, 0.03]", 0.01, 0.03),
    Bin("(0.03, 0.05]", 0.03, 0.05),
    Bin("(0.05, 0.1]", 0.05, 0.1),
    Bin("(0.1, 0.5]", 0.1, 0.5),
    Bin("(0.5, 1]", 0.5, 1.0),
)

# (replicated, total) per default bin, as reported for the 133 findings.
PUBLISHED_FIGURE2 = ((54, 65), (8, 15), (8, 13), (5, 9), (5, 7), (4, 13), (6, 11))


@dataclass(frozen=True)
class BinCount:
    bin: Bin
    total: int
    replicated: int

    @property
    def failed(self) -> int:
        return self.total - self.replicated


@dataclass(frozen=True)
class BinFlag:
    key: str
    value: str
    assigned: str
    candidates: tuple[str, ...]
    reason: str

    def to_dict(self) -> dict[str, Any]:
        return {"key": self.key, "value": self.value, "assigned": self.assigned,
                "candidates": list(self.candidates), "reason": self.reason}


@dataclass(frozen=True)
class BinTable:
    counts: tuple[BinCount, ...]
    flags: tuple[BinFlag, ...] = ()
    missing: int = 0

    def to_rows(self) -> list[dict[str, Any]]:
        return [
            {"label": c.bin.label, "lower": c.bin.lower, "upper": c.bin.upper, "boundary": c.bin.boundary,
             "total": c.total, "replicated": c.replicated, "failed": c.failed}
            for c in self.counts
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["label", "lower", "upper", "boundary", "total", "replicated", "failed"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.to_rows())
        return buf.getvalue()

    def to_dict(self) -> dict[str, Any]:
        return {"bins": self.to_rows(), "flags": [f.to_dict() for f in self.flags], "missing": self.missing}


def bin_by_original_p(
    rows: Iterable[AssessedFinding],
    bins: Sequence[Bin] = DEFAULT_P_BINS,
    censored: str = "lowest",
) -> BinTable:
    """Count findings (and replications) per range of the original p-value.

    A censored ``<c`` entry whose range fits inside one bin goes there.  If
    the range straddles a boundary it is flagged and assigned, under
    ``censored="lowest"``, to the lowest bin it intersects, or under
    ``censored="upper"``, to the bin containing its open upper bound ``c``.

    Raises:
        UnbinnableRow: a p-value lies outside every bin.
    """
    if censored not in ("lowest", "upper"):
        raise ValueError(f"censored must be 'lowest' or 'upper', got {censored!r}")
    tallies = [[0, 0] for _ in bins]
    flags = []
    for r in rows:
        p = r.original.human_p
        if not p.censored:
            hits = [i for i, b in enumerate(bins) if b.contains(p.value)]
            if not hits:
                raise UnbinnableRow(f"{r.key}: p={p} lies outside every bin")
            idx = hits[0]
            b = bins[idx]
            if b.lower_inclusive and b.upper_inclusive and p.value == b.upper and idx + 1 < len(bins):
                flags.append(BinFlag(r.key, str(p), b.label, (b.label, bins[idx + 1].label),
                                     "exact value on the closed upper edge of the first bin"))
        else:
            cand = [i for i, b in enumerate(bins) if b.intersects_below(p.value)]
            if not cand:
                raise UnbinnableRow(f"{r.key}: p={p} lies outside every bin")
            first = bins[cand[0]]
            if len(cand) == 1 and first.lower == 0.0 and first.lower_inclusive and p.value <= first.upper:
                idx = cand[0]
            else:
                holding = [i for i in cand if bins[i].contains(p.value)]
                if censored == "lowest" or not holding:
                    idx = cand[0]
                else:
                    idx = holding[0]
                flags.append(BinFlag(r.key, str(p), bins[idx].label, tuple(bins[i].label for i in cand),
                                     "censored range straddles a bin boundary"))
        tallies[idx][0] += 1
        tallies[idx][1] += int(bool(r.replicated))
    return BinTable(tuple(BinCount(b, t, k) for b, (t, k) in zip(bins, tallies)), tuple(flags))


def compare_with_published(table: BinTable, published: Sequence[tuple[int, int]] = PUBLISHED_FIGURE2) -> list[dict[str, Any]]:
    """Per-bin differences from published (replicated, total) pairs; empty when they all match."""
    out = []
    for c, (rep, tot) in zip(table.counts, published):
        if c.replicated != rep or c.total != tot:
            out.append({"label": c.bin.label, "published": [rep, tot], "computed": [c.replicated, c.total],
                        "delta_replicated": c.replicated - rep, "delta_total": c.total - tot})
    return out


COHEN_THRESHOLDS = {
    "cohen_d": (0.2, 0.5, 0.8),
    "eta_squared_partial": (0.01, 0.06, 0.14),
    "cramers_v": (0.1, 0.3, 0.5),
}
EFFECT_BIN_LABELS = ("negligible", "small", "medium", "large")


def effect_size_category(kind: str, value: float) -> int:
    """Index into :data:`EFFECT_BIN_LABELS`; bins are closed below, open above."""
    if kind not in COHEN_THRESHOLDS:
        raise UnknownEffectKind(f"unknown effect size kind {kind!r}")
    x = abs(value)
    if math.isnan(x):
        raise ValueError("effect size is NaN")
    return sum(x >= t for t in COHEN_THRESHOLDS[kind])


def bin_by_effect_size(rows: Iterable[AssessedFinding]) -> BinTable:
    """Four Cohen-benchmark bins; rows without an effect size are counted in ``missing``.

    Different effect-size kinds are pooled by category, each judged against
    its own thresholds.
    """
    tallies = [[0, 0] for _ in EFFECT_BIN_LABELS]
    missing = 0
    for r in rows:
        es = r.original.effect_size
        if es is None:
            missing += 1
            continue
        i = effect_size_category(es.kind, es.value)
        tallies[i][0] += 1
        tallies[i][1] += int(bool(r.replicated))
    bins = [Bin(label, float(i), float(i + 1), True, False) for i, label in enumerate(EFFECT_BIN_LABELS)]
    return BinTable(tuple(BinCount(b, t, k) for b, (t, k) in zip(bins, tallies)), (), missing)


# ---------------------------------------------------------------- reports


def benchmark_report(records: Sequence[FindingRecord], policy: SignificancePolicy = SignificancePolicy(),
                     censored: str = "lowest") -> dict[str, Any]:
    """Headline aggregates, both bin tables and the audit for a findings table.

    Aggregates and bins use the recorded outcomes; the rule-derived
    aggregate under ``policy`` is reported alongside.
    """
    recorded = [AssessedFinding.from_recorded(r) for r in records]
    audit = audit_against_recorded(records, policy)
    by_rule = [AssessedFinding(r.key, r.effect_kind, r.original, e.rule_verdict == "replicated")
               for r, e in zip(records, audit.entries)]
    p_bins = bin_by_original_p(recorded, censored=censored)
    return {
        "policy": policy.to_dict(),
        "summary": {k: v.to_dict() for k, v in aggregate_outcomes(recorded).items()},
        "summary_by_rule": {k: v.to_dict() for k, v in aggregate_outcomes(by_rule).items()},
        "p_bins": p_bins.to_dict() | {"censored_assignment": censored,
                                      "deviations_from_published": compare_with_published(p_bins)},
        "effect_size_bins": bin_by_effect_size(recorded).to_dict(),
        "audit": audit.to_dict(),
    }


def assess_study(plans: Sequence[Any], analyses: Sequence[Any], manipulation_failed: bool,
                 policy: SignificancePolicy = SignificancePolicy()) -> tuple[list[ReplicationOutcome], list[dict[str, Any]]]:
    """Classify every planned finding of one study against its analysis.

    Findings whose analysis errored are reported separately and left out of
    the outcomes.
    """
    by_id = {a.finding_id: a for a in analyses}
    outcomes, errors = [], []
    for plan in plans:
        a = by_id.get(plan.finding_id)
        if manipulation_failed:
            outcomes.append(classify_finding(plan.original, ManipulationCheckFailed(), policy, plan.finding_id))
        elif a is None or a.result is None:
            errors.append({"finding_id": plan.finding_id, "error": a.error if a else "no analysis"})
        else:
            try:
                outcomes.append(classify_finding(plan.original, a.result, policy, plan.finding_id))
            except MissingDirection as e:
                errors.append({"finding_id": plan.finding_id, "error": f"MissingDirection: {e}"})
    return outcomes, errors
