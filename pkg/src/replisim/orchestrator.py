"""Run execution: dispatch persona requests, persist them, parse answers, build the dataset.

The run ledger is an append-only newline-delimited JSON file.  Each line is
one :class:`RunRecord`; the latest line for a ``(run_id, persona_id)`` pair
wins.  Re-invoking :func:`execute_run` with the same ``run_id`` only
processes personas that are not yet ``done``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .gateway import CompletionRequest, Gateway, GatewayError
from .personas import Persona, PromptBundle, build_prompt
from .stats import EmptyCell, InsufficientVariance, TestResult, welch_t_test
from .study import Choice, FreeText, Likert, ManipulationCheck, Measure, NumericOpen, StudySpec

log = logging.getLogger(__name__)


class StoreError(RuntimeError):
    pass


# ---------------------------------------------------------------- answers


@dataclass(frozen=True)
class ParsedAnswer:
    measure_id: str
    value: Any
    valid: bool
    reason: str = ""
    units: str | None = None


_LINE = re.compile(r"^\s*(?:\*\*)?\s*(?:Q(?:uestion)?\s*)?(\d+)\s*(?:\*\*)?\s*[:.)\-]\s*(.*?)\s*$", re.IGNORECASE)
_NUMBER = re.compile(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)?(?:\.\d+)?")
_CURRENCY = "$€£¥"


def _first_number(text: str) -> float | None:
    cleaned = text.strip().lstrip(_CURRENCY + " ")
    for m in _NUMBER.finditer(cleaned):
        tok = m.group(0)
        if tok and any(ch.isdigit() for ch in tok):
            return float(tok.replace(",", ""))
    return None


def _parse_one(measure: Measure, text: str) -> ParsedAnswer:
    r = measure.response
    mid = measure.measure_id
    text = text.strip()
    if not text:
        return ParsedAnswer(mid, None, False, "missing")
    if isinstance(r, FreeText):
        return ParsedAnswer(mid, text, True)
    if isinstance(r, Choice):
        num = _first_number(text)
        if num is not None:
            if not num.is_integer() or not 1 <= num <= len(r.options):
                return ParsedAnswer(mid, num, False, "out-of-range")
            return ParsedAnswer(mid, int(num) - 1, True)
        low = text.lower().strip(" .")
        for i, opt in enumerate(r.options):
            if low == opt.lower():
                return ParsedAnswer(mid, i, True)
        return ParsedAnswer(mid, text, False, "unrecognized option")
    num = _first_number(text)
    if num is None:
        return ParsedAnswer(mid, text, False, "not a number")
    if isinstance(r, Likert):
        if not num.is_integer():
            return ParsedAnswer(mid, num, False, "not an integer")
        if not r.min <= num <= r.max:
            return ParsedAnswer(mid, int(num), False, "out-of-range")
        return ParsedAnswer(mid, int(num), True)
    assert isinstance(r, NumericOpen)
    if (r.min is not None and num < r.min) or (r.max is not None and num > r.max):
        return ParsedAnswer(mid, num, False, "out-of-range", r.units or None)
    return ParsedAnswer(mid, num, True, "", r.units or None)


def parse_answers(raw: str, measures: Sequence[Measure]) -> list[ParsedAnswer]:
    """Match answer lines to measures.

    Lines labelled ``Q<k>:`` (or ``<k>.``/``<measure_id>:``) are matched by
    label; an unlabelled reply with exactly one line per measure is matched
    by order.  Failures come back as ``valid=False`` entries, never raised.
    """
    by_index: dict[int, str] = {}
    by_id: dict[str, str] = {}
    ids = {m.measure_id.lower(): m.measure_id for m in measures}
    lines = [ln for ln in (raw or "").splitlines() if ln.strip()]
    for ln in lines:
        m = _LINE.match(ln)
        if m:
            by_index.setdefault(int(m.group(1)), m.group(2))
            continue
        if ":" in ln:
            head, _, tail = ln.partition(":")
            key = head.strip().strip("*").lower()
            if key in ids:
                by_id.setdefault(ids[key], tail)
    if not by_index and not by_id and len(lines) == len(measures):
        by_index = {i: ln for i, ln in enumerate(lines, start=1)}
    out = []
    for i, meas in enumerate(measures, start=1):
        text = by_index.get(i, by_id.get(meas.measure_id))
        if text is None:
            out.append(ParsedAnswer(meas.measure_id, None, False, "missing"))
        else:
            out.append(_parse_one(meas, text))
    return out


# ---------------------------------------------------------------- ledger


@dataclass
class RunRecord:
    run_id: str
    persona_id: int
    condition_id: str
    attributes: dict[str, Any]
    prompt_hash: str
    status: str = "pending"  # pending | done | failed
    raw_response: str | None = None
    parsed: list[dict[str, Any]] | None = None
    failure_kind: str | None = None
    attempt_count: int = 0
    reprompted: bool = False
    started_at: float | None = None
    finished_at: float | None = None

    def answers(self) -> list[ParsedAnswer]:
        return [ParsedAnswer(**a) for a in (self.parsed or [])]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> RunRecord:
        return cls(**json.loads(line))


class MemoryStore:
    """Ledger store kept in memory; useful for tests and Monte Carlo runs."""

    def __init__(self) -> None:
        self.records: list[RunRecord] = []
        self._lock = threading.Lock()

    def append(self, record: RunRecord) -> None:
        with self._lock:
            self.records.append(replace(record, attributes=dict(record.attributes),
                                        parsed=[dict(a) for a in record.parsed] if record.parsed is not None else None))

    def load(self, run_id: str) -> dict[int, RunRecord]:
        with self._lock:
            return {r.persona_id: r for r in self.records if r.run_id == run_id}


class JsonlStore:
    """Append-only newline-delimited JSON ledger with a single-writer lock."""

    def __init__(self, path: str | Path, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()

    def append(self, record: RunRecord) -> None:
        line = record.to_json() + "\n"
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)
                    fh.flush()
                    if self.fsync:
                        os.fsync(fh.fileno())
            except OSError as e:
                raise StoreError(f"cannot append to ledger {self.path}: {e}") from e

    def load(self, run_id: str) -> dict[int, RunRecord]:
        out: dict[int, RunRecord] = {}
        if not self.path.exists():
            return out
        try:
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = RunRecord.from_json(line)
                    except (json.JSONDecodeError, TypeError):
                        # a torn final line from an interrupted write is dropped
                        log.warning("skipping unreadable ledger line %d in %s", lineno, self.path)
                        continue
                    if rec.run_id == run_id:
                        out[rec.persona_id] = rec
        except OSError as e:
            raise StoreError(f"cannot read ledger {self.path}: {e}") from e
        return out


@dataclass
class RunLedger:
    run_id: str
    records: dict[int, RunRecord]
    requests_issued: int = 0

    def done(self) -> list[RunRecord]:
        return [r for _, r in sorted(self.records.items()) if r.status == "done"]

    def failed(self) -> list[RunRecord]:
        return [r for _, r in sorted(self.records.items()) if r.status == "failed"]


def required_measures(study: StudySpec) -> list[str]:
    """Measures every usable persona must answer validly."""
    ids = [f.dv for f in study.analysis_plan]
    if study.manipulation_check is not None:
        ids.append(study.manipulation_check.measure_id)
    if not ids:
        ids = [m.measure_id for m in study.measures if not isinstance(m.response, FreeText)]
    seen = set()
    return [i for i in ids if not (i in seen or seen.add(i))]


def make_request(study: StudySpec, persona: Persona, gateway: Gateway, run_id: str) -> CompletionRequest:
    cond = study.condition(persona.condition_id)
    prompt = build_prompt(persona, cond, study.measures, study)
    return CompletionRequest(
        request_id=f"{run_id}:{persona.persona_id}",
        prompt=prompt,
        measures=study.measures,
        config=gateway.config.snapshot(),
        context={"attributes": dict(persona.attributes), "levels": dict(cond.level_assignment)},
    )


def execute_run(
    study: StudySpec,
    personas: Sequence[Persona],
    gateway: Gateway,
    store: MemoryStore | JsonlStore,
    run_id: str = "run",
    clock: Callable[[], float] = time.time,
) -> RunLedger:
    """Collect one response per persona, resuming any earlier partial run.

    Personas whose latest record is ``done`` are skipped.  A persona whose
    answers fail to parse is re-prompted once.  Provider errors mark the
    persona ``failed`` without stopping the run; store errors abort it.
    """
    for p in personas:
        if p.condition_id is None:
            raise ValueError(f"persona {p.persona_id} has no condition assignment")
    existing = store.load(run_id)
    todo = [p for p in personas if existing.get(p.persona_id) is None or existing[p.persona_id].status != "done"]
    # build every prompt up front so a blinding violation aborts before any request
    requests = {p.persona_id: make_request(study, p, gateway, run_id) for p in todo}
    required = set(required_measures(study))
    issued_before = gateway.requests_issued

    def work(p: Persona) -> RunRecord:
        req = requests[p.persona_id]
        rec = RunRecord(run_id, p.persona_id, p.condition_id, dict(p.attributes), req.prompt.digest(), started_at=clock())
        try:
            comp = gateway.submit_completion(req)
            rec.attempt_count = comp.attempts
            answers = parse_answers(comp.text, study.measures)
            if any(not a.valid for a in answers if a.measure_id in required):
                retry = CompletionRequest(f"{req.request_id}:reprompt", req.prompt, req.measures, req.config, req.context)
                comp = gateway.submit_completion(retry)
                rec.attempt_count += comp.attempts
                rec.reprompted = True
                answers = parse_answers(comp.text, study.measures)
            rec.raw_response = comp.text
            rec.parsed = [dict(vars(a)) for a in answers]
            rec.status = "done"
        except GatewayError as e:
            log.warning("persona %d failed: %s", p.persona_id, e)
            rec.status = "failed"
            rec.failure_kind = e.kind
        rec.finished_at = clock()
        store.append(rec)
        return rec

    records = dict(existing)
    if gateway.config.max_parallel == 1 or len(todo) <= 1:
        for p in todo:
            records[p.persona_id] = work(p)
    else:
        with ThreadPoolExecutor(max_workers=gateway.config.max_parallel) as pool:
            futures = [pool.submit(work, p) for p in todo]
            try:
                for fut in futures:
                    rec = fut.result()
                    records[rec.persona_id] = rec
            except BaseException:
                for fut in futures:
                    fut.cancel()
                raise
    return RunLedger(run_id, records, gateway.requests_issued - issued_before)


# ---------------------------------------------------------------- dataset


@dataclass(frozen=True)
class Exclusion:
    """One excluded persona, or with ``measure_id`` set, one blanked answer."""

    persona_id: int
    reason: str
    measure_id: str | None = None


@dataclass
class AnalysisDataset:
    """Wide table: one row per usable persona."""

    attribute_names: list[str]
    measure_ids: list[str]
    rows: list[dict[str, Any]]  # persona_id, attributes, condition, values
    exclusions: list[Exclusion] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, measure_id: str, condition_ids: Iterable[str] | None = None) -> list[Any]:
        keep = None if condition_ids is None else set(condition_ids)
        return [r["values"][measure_id] for r in self.rows if keep is None or r["condition"] in keep]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["persona_id", *self.attribute_names, "condition", *self.measure_ids])
        for r in self.rows:
            w.writerow([r["persona_id"], *(_cell(r["attributes"].get(a)) for a in self.attribute_names),
                        r["condition"], *(_cell(r["values"].get(m)) for m in self.measure_ids)])
        return buf.getvalue()

    def exclusion_report(self) -> list[dict[str, Any]]:
        return [{"persona_id": e.persona_id, "measure_id": e.measure_id, "reason": e.reason} for e in self.exclusions]

    @classmethod
    def from_csv(cls, text: str, study: StudySpec) -> AnalysisDataset:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if "persona_id" not in header or "condition" not in header:
            raise ValueError("dataset CSV needs persona_id and condition columns")
        ci = header.index("condition")
        attrs = header[1:ci]
        measure_cols = header[ci + 1:]
        known = {m.measure_id: m for m in study.measures}
        rows = []
        for rec in reader:
            if not rec:
                continue
            values = {}
            for name, raw in zip(measure_cols, rec[ci + 1:]):
                m = known.get(name)
                values[name] = _uncell(raw, m)
            rows.append({
                "persona_id": int(rec[0]),
                "attributes": {a: _uncell(v, None) for a, v in zip(attrs, rec[1:ci])},
                "condition": rec[ci],
                "values": values,
            })
        return cls(attrs, measure_cols, rows)


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _uncell(raw: str, measure: Measure | None) -> Any:
    if raw == "":
        return None
    if measure is not None and isinstance(measure.response, (Choice, FreeText)):
        return raw
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _dataset_value(measure: Measure, ans: ParsedAnswer) -> Any:
    if not ans.valid:
        return None
    if isinstance(measure.response, Choice):
        return measure.response.options[ans.value]
    return ans.value


def build_dataset(ledger: RunLedger, study: StudySpec, exclusion: str = "study") -> AnalysisDataset:
    """Assemble the analysis table from a finished run.

    Personas that failed are always excluded.  With ``exclusion="study"``
    a persona whose answer to any required measure is invalid or missing
    is dropped entirely; with ``exclusion="finding"`` the row is kept, the
    bad cells are left blank and each analysis drops rows missing its own
    DV.  Every exclusion is listed in ``exclusions``.

    Raises:
        EmptyCell: some condition has no usable rows.
    """
    if exclusion not in ("study", "finding"):
        raise ValueError(f"exclusion must be 'study' or 'finding', got {exclusion!r}")
    required = required_measures(study)
    measures = {m.measure_id: m for m in study.measures}
    attr_names = study.sample.attribute_names()
    rows, exclusions = [], []
    for pid, rec in sorted(ledger.records.items()):
        if rec.status != "done":
            exclusions.append(Exclusion(pid, f"status {rec.status}" + (f" ({rec.failure_kind})" if rec.failure_kind else "")))
            continue
        answers = {a.measure_id: a for a in rec.answers()}
        bad = [f"{mid}: {answers[mid].reason if mid in answers else 'missing'}"
               for mid in required if mid not in answers or not answers[mid].valid]
        if bad and exclusion == "study":
            exclusions.append(Exclusion(pid, "invalid " + "; ".join(bad)))
            continue
        for mid in required:
            if mid not in answers or not answers[mid].valid:
                exclusions.append(Exclusion(pid, "invalid " + (answers[mid].reason if mid in answers else "missing"), mid))
        rows.append({
            "persona_id": pid,
            "attributes": dict(rec.attributes),
            "condition": rec.condition_id,
            "values": {mid: _dataset_value(measures[mid], answers[mid]) if mid in answers else None for mid in measures},
        })
    counts = {c.condition_id: 0 for c in study.conditions}
    for r in rows:
        counts[r["condition"]] = counts.get(r["condition"], 0) + 1
    empty = [cid for cid, k in counts.items() if k == 0]
    if empty:
        raise EmptyCell(f"no usable rows in condition(s) {', '.join(empty)}")
    return AnalysisDataset(attr_names, [m.measure_id for m in study.measures], rows, exclusions)


# ---------------------------------------------------------------- manipulation check


@dataclass(frozen=True)
class ManipulationCheckResult:
    passed: bool
    result: TestResult | InsufficientVariance

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "result": self.result.to_dict()}


def level_values(dataset: AnalysisDataset, study: StudySpec, measure_id: str, factor: str, level: str) -> list[float]:
    conds = [c.condition_id for c in study.conditions if c.level_assignment.get(factor) == level]
    return [v for v in dataset.column(measure_id, conds) if v is not None]


def apply_manipulation_check(dataset: AnalysisDataset, check: ManipulationCheck, study: StudySpec) -> ManipulationCheckResult:
    """Welch contrast on the check measure; passes iff significant at ``check.alpha`` in the expected direction."""
    if check.measure_id not in dataset.measure_ids:
        raise ValueError(f"manipulation-check measure {check.measure_id!r} is not in the dataset")
    d = check.expected_direction
    hi = level_values(dataset, study, check.measure_id, d.factor, d.higher)
    lo = level_values(dataset, study, check.measure_id, d.factor, d.lower)
    if not hi or not lo:
        raise EmptyCell(f"manipulation check has an empty cell for factor {d.factor!r}")
    res = welch_t_test(hi, lo, labels=(d.higher, d.lower))
    if isinstance(res, InsufficientVariance):
        passed = res.difference_sign > 0
    else:
        passed = res.p <= check.alpha and res.direction_sign > 0
    return ManipulationCheckResult(passed, res)
