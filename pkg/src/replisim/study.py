"""Study definitions: domain types, JSON parsing, validation and the findings table.

A study file is a single UTF-8 JSON document.  :func:`parse_study_spec`
turns it into an immutable :class:`StudySpec`; :func:`validate_study_spec`
reports every violated invariant as data.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
import string
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union
from urllib.parse import urlparse

WEIGHT_TOL = 1e-9
TESTS = ("welch_t", "student_t", "anova1", "anova2", "chi2", "ols")
ORIGINAL_EFFECT_KINDS = ("cohen_d", "eta_squared_partial", "cramers_v")


class StudyError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class SchemaError(StudyError):
    """Unknown field, missing field or wrong type."""


class SemanticError(StudyError):
    """A well-typed document that violates a study invariant."""

    def __init__(self, path: str, message: str, code: str = ""):
        super().__init__(path, message)
        self.code = code


class RowError(ValueError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


# ---------------------------------------------------------------- p-values


_P_RE = re.compile(r"^\s*(<)?\s*(\d*\.?\d+(?:[eE][-+]?\d+)?)\s*$")


@dataclass(frozen=True)
class PValue:
    """An exact p-value or a censored bound ``p < bound``.

    Censored values are never coerced to numbers: ``censored_below(c) <= t``
    holds iff ``c <= t``.
    """

    value: float
    censored: bool = False

    def __post_init__(self) -> None:
        if self.censored:
            if not 0.0 < self.value <= 1.0:
                raise ValueError(f"censored bound must lie in (0, 1], got {self.value}")
        elif not 0.0 <= self.value <= 1.0:
            raise ValueError(f"p-value must lie in [0, 1], got {self.value}")

    @classmethod
    def exact(cls, v: float) -> PValue:
        return cls(float(v), False)

    @classmethod
    def censored_below(cls, c: float) -> PValue:
        return cls(float(c), True)

    @classmethod
    def parse(cls, text: Union[str, float, int, "PValue"]) -> PValue:
        if isinstance(text, PValue):
            return text
        if isinstance(text, bool):
            raise ValueError(f"not a p-value: {text!r}")
        if isinstance(text, (int, float)):
            return cls.exact(text)
        m = _P_RE.match(str(text))
        if not m:
            raise ValueError(f"not a p-value: {text!r}")
        v = float(m.group(2))
        return cls.censored_below(v) if m.group(1) else cls.exact(v)

    def le(self, t: float) -> bool:
        """p <= t."""
        return self.value <= t

    def lt(self, t: float) -> bool:
        """p < t; a censored ``p < c`` is below ``t`` whenever ``c <= t``."""
        return self.value <= t if self.censored else self.value < t

    def __str__(self) -> str:
        if self.censored:
            return "<" + _fmt_num(self.value)
        return _fmt_num(self.value)

    def to_json(self) -> str | float:
        return str(self) if self.censored else self.value


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    if s.startswith("0."):
        s = s[1:]
    return s if not s.endswith(".0") else s[:-2]


# ---------------------------------------------------------------- domain types


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple[str, ...]


@dataclass(frozen=True)
class StimulusRef:
    kind: str  # text | image | video
    payload: str
    caption: str | None = None

    @property
    def is_attachment(self) -> bool:
        return self.kind in ("image", "video")


@dataclass(frozen=True)
class Condition:
    condition_id: str
    level_assignment: dict[str, str]
    stimuli: tuple[StimulusRef, ...] = ()


@dataclass(frozen=True)
class Likert:
    min: int
    max: int
    low_anchor: str = ""
    high_anchor: str = ""
    type: str = field(default="likert", init=False)


@dataclass(frozen=True)
class NumericOpen:
    units: str = ""
    min: float | None = None
    max: float | None = None
    type: str = field(default="numeric_open", init=False)


@dataclass(frozen=True)
class Choice:
    options: tuple[str, ...]
    type: str = field(default="choice", init=False)


@dataclass(frozen=True)
class FreeText:
    type: str = field(default="free_text", init=False)


ResponseType = Union[Likert, NumericOpen, Choice, FreeText]


@dataclass(frozen=True)
class Measure:
    measure_id: str
    prompt_text: str
    response: ResponseType


@dataclass(frozen=True)
class Categorical:
    weights: dict[str, float]
    type: str = field(default="categorical", init=False)


@dataclass(frozen=True)
class NumericUniform:
    lo: float
    hi: float
    integer_valued: bool = False
    type: str = field(default="numeric_uniform", init=False)


@dataclass(frozen=True)
class NumericEmpirical:
    values: tuple[tuple[float, float], ...]  # (value, weight)
    type: str = field(default="numeric_empirical", init=False)


@dataclass(frozen=True)
class Joint:
    """Joint quota over several categorical attributes, one weighted row per combination."""

    attributes: tuple[str, ...]
    rows: tuple[tuple[tuple[tuple[str, str], ...], float], ...]
    type: str = field(default="joint", init=False)

    def row_values(self) -> list[tuple[dict[str, str], float]]:
        return [(dict(vals), w) for vals, w in self.rows]


Distribution = Union[Categorical, NumericUniform, NumericEmpirical, Joint]


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    distribution: Distribution

    @property
    def provides(self) -> tuple[str, ...]:
        if isinstance(self.distribution, Joint):
            return self.distribution.attributes
        return (self.name,)


@dataclass(frozen=True)
class SampleSpec:
    attributes: tuple[AttributeSpec, ...]
    description_template: str = ""

    def attribute_names(self) -> list[str]:
        return [n for a in self.attributes for n in a.provides]


@dataclass(frozen=True)
class Contrast:
    factor: str
    higher: str
    lower: str


@dataclass(frozen=True)
class DirectionConvention:
    """Which level is hypothesized higher.

    For interactions ``moderator`` gives the second factor's levels; the
    signed contrast is (higher - lower | moderator.higher) minus
    (higher - lower | moderator.lower).  ``option`` names the choice option
    whose share is compared in chi-squared findings.
    """

    factor: str
    higher: str
    lower: str
    moderator: Contrast | None = None
    option: str | None = None

    @property
    def contrast(self) -> Contrast:
        return Contrast(self.factor, self.higher, self.lower)


@dataclass(frozen=True)
class OriginalEffectSize:
    kind: str
    value: float


@dataclass(frozen=True)
class OriginalFinding:
    human_p: PValue
    direction_sign: int | None = None
    effect_size: OriginalEffectSize | None = None
    recorded_outcome: str | None = None  # "yes" | "no"
    note: str | None = None  # "na_star" | "na_double_star"


@dataclass(frozen=True)
class Effect:
    kind: str  # main | interaction
    factors: tuple[str, ...]


@dataclass(frozen=True)
class FindingPlan:
    finding_id: str
    dv: str
    effect: Effect
    test: str
    direction: DirectionConvention
    original: OriginalFinding


@dataclass(frozen=True)
class ManipulationCheck:
    measure_id: str
    expected_direction: DirectionConvention
    alpha: float = 0.05


@dataclass(frozen=True)
class StudySpec:
    study_id: str
    factors: tuple[Factor, ...]
    conditions: tuple[Condition, ...]
    measures: tuple[Measure, ...]
    sample: SampleSpec
    n: int
    analysis_plan: tuple[FindingPlan, ...]
    manipulation_check: ManipulationCheck | None = None
    source_label: str | None = None
    blind_terms: tuple[str, ...] = ()
    instructions: str = ""
    crossing: str = "full"  # full | subset

    def measure(self, measure_id: str) -> Measure:
        for m in self.measures:
            if m.measure_id == measure_id:
                return m
        raise KeyError(measure_id)

    def factor(self, name: str) -> Factor:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    def condition(self, condition_id: str) -> Condition:
        for c in self.conditions:
            if c.condition_id == condition_id:
                return c
        raise KeyError(condition_id)


# ---------------------------------------------------------------- schema parsing

_TOP_KEYS = {
    "study_id", "factors", "conditions", "measures", "sample", "n",
    "analysis_plan", "manipulation_check", "source_label", "blind_terms",
    "instructions", "crossing",
}
_TOP_REQUIRED = {"study_id", "factors", "conditions", "measures", "sample", "n", "analysis_plan"}


def _obj(x: Any, path: str, keys: set[str], required: set[str]) -> dict:
    if not isinstance(x, Mapping):
        raise SchemaError(path, f"expected object, got {type(x).__name__}")
    for k in x:
        if k not in keys:
            raise SchemaError(f"{path}.{k}", "unknown field")
    for k in sorted(required):
        if k not in x:
            raise SchemaError(f"{path}.{k}", "missing required field")
    return dict(x)


def _str(x: Any, path: str) -> str:
    if not isinstance(x, str):
        raise SchemaError(path, f"expected string, got {type(x).__name__}")
    return x


def _num(x: Any, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(path, f"expected number, got {type(x).__name__}")
    return float(x)


def _int(x: Any, path: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise SchemaError(path, f"expected integer, got {type(x).__name__}")
    return x


def _list(x: Any, path: str) -> list:
    if not isinstance(x, list):
        raise SchemaError(path, f"expected array, got {type(x).__name__}")
    return x


def _str_map(x: Any, path: str) -> dict[str, str]:
    if not isinstance(x, Mapping):
        raise SchemaError(path, f"expected object, got {type(x).__name__}")
    return {_str(k, path): _str(v, f"{path}.{k}") for k, v in x.items()}


def _factor(x: Any, path: str) -> Factor:
    d = _obj(x, path, {"name", "levels"}, {"name", "levels"})
    levels = tuple(_str(v, f"{path}.levels[{i}]") for i, v in enumerate(_list(d["levels"], f"{path}.levels")))
    return Factor(_str(d["name"], f"{path}.name"), levels)


def _stimulus(x: Any, path: str) -> StimulusRef:
    d = _obj(x, path, {"kind", "payload", "caption"}, {"kind", "payload"})
    kind = _str(d["kind"], f"{path}.kind")
    if kind not in ("text", "image", "video"):
        raise SchemaError(f"{path}.kind", f"expected one of text/image/video, got {kind!r}")
    cap = d.get("caption")
    return StimulusRef(kind, _str(d["payload"], f"{path}.payload"), None if cap is None else _str(cap, f"{path}.caption"))


def _condition(x: Any, path: str) -> Condition:
    d = _obj(x, path, {"condition_id", "levels", "stimuli"}, {"condition_id", "levels"})
    stimuli = tuple(_stimulus(s, f"{path}.stimuli[{i}]") for i, s in enumerate(_list(d.get("stimuli", []), f"{path}.stimuli")))
    return Condition(_str(d["condition_id"], f"{path}.condition_id"), _str_map(d["levels"], f"{path}.levels"), stimuli)


def _response(x: Any, path: str) -> ResponseType:
    if not isinstance(x, Mapping) or "type" not in x:
        raise SchemaError(path, "expected object with a 'type' field")
    kind = x["type"]
    if kind == "likert":
        d = _obj(x, path, {"type", "min", "max", "low_anchor", "high_anchor"}, {"type", "min", "max"})
        return Likert(_int(d["min"], f"{path}.min"), _int(d["max"], f"{path}.max"),
                      _str(d.get("low_anchor", ""), f"{path}.low_anchor"),
                      _str(d.get("high_anchor", ""), f"{path}.high_anchor"))
    if kind == "numeric_open":
        d = _obj(x, path, {"type", "units", "min", "max"}, {"type"})
        lo = d.get("min")
        hi = d.get("max")
        return NumericOpen(_str(d.get("units", ""), f"{path}.units"),
                           None if lo is None else _num(lo, f"{path}.min"),
                           None if hi is None else _num(hi, f"{path}.max"))
    if kind == "choice":
        d = _obj(x, path, {"type", "options"}, {"type", "options"})
        opts = _list(d["options"], f"{path}.options")
        return Choice(tuple(_str(o, f"{path}.options[{i}]") for i, o in enumerate(opts)))
    if kind == "free_text":
        _obj(x, path, {"type"}, {"type"})
        return FreeText()
    raise SchemaError(f"{path}.type", f"unknown response type {kind!r}")


def _measure(x: Any, path: str) -> Measure:
    d = _obj(x, path, {"measure_id", "prompt_text", "response"}, {"measure_id", "prompt_text", "response"})
    return Measure(_str(d["measure_id"], f"{path}.measure_id"), _str(d["prompt_text"], f"{path}.prompt_text"),
                   _response(d["response"], f"{path}.response"))


def _distribution(x: Any, path: str) -> Distribution:
    if not isinstance(x, Mapping) or "type" not in x:
        raise SchemaError(path, "expected object with a 'type' field")
    kind = x["type"]
    if kind == "categorical":
        d = _obj(x, path, {"type", "weights"}, {"type", "weights"})
        if not isinstance(d["weights"], Mapping):
            raise SchemaError(f"{path}.weights", "expected object")
        return Categorical({_str(k, f"{path}.weights"): _num(v, f"{path}.weights.{k}") for k, v in d["weights"].items()})
    if kind == "numeric_uniform":
        d = _obj(x, path, {"type", "lo", "hi", "integer_valued"}, {"type", "lo", "hi"})
        iv = d.get("integer_valued", False)
        if not isinstance(iv, bool):
            raise SchemaError(f"{path}.integer_valued", "expected boolean")
        return NumericUniform(_num(d["lo"], f"{path}.lo"), _num(d["hi"], f"{path}.hi"), iv)
    if kind == "numeric_empirical":
        d = _obj(x, path, {"type", "values"}, {"type", "values"})
        vals = []
        for i, pair in enumerate(_list(d["values"], f"{path}.values")):
            p = _list(pair, f"{path}.values[{i}]")
            if len(p) != 2:
                raise SchemaError(f"{path}.values[{i}]", "expected [value, weight]")
            vals.append((_num(p[0], f"{path}.values[{i}][0]"), _num(p[1], f"{path}.values[{i}][1]")))
        return NumericEmpirical(tuple(vals))
    if kind == "joint":
        d = _obj(x, path, {"type", "attributes", "rows"}, {"type", "attributes", "rows"})
        attrs = tuple(_str(a, f"{path}.attributes[{i}]") for i, a in enumerate(_list(d["attributes"], f"{path}.attributes")))
        rows = []
        for i, r in enumerate(_list(d["rows"], f"{path}.rows")):
            rp = f"{path}.rows[{i}]"
            rd = _obj(r, rp, {"values", "weight"}, {"values", "weight"})
            vals = _str_map(rd["values"], f"{rp}.values")
            rows.append((tuple(sorted(vals.items())), _num(rd["weight"], f"{rp}.weight")))
        return Joint(attrs, tuple(rows))
    raise SchemaError(f"{path}.type", f"unknown distribution type {kind!r}")


def _sample(x: Any, path: str) -> SampleSpec:
    d = _obj(x, path, {"attributes", "description_template"}, {"attributes"})
    attrs = []
    for i, a in enumerate(_list(d["attributes"], f"{path}.attributes")):
        ap = f"{path}.attributes[{i}]"
        ad = _obj(a, ap, {"name", "distribution"}, {"name", "distribution"})
        attrs.append(AttributeSpec(_str(ad["name"], f"{ap}.name"), _distribution(ad["distribution"], f"{ap}.distribution")))
    return SampleSpec(tuple(attrs), _str(d.get("description_template", ""), f"{path}.description_template"))


def _contrast(x: Any, path: str) -> Contrast:
    d = _obj(x, path, {"factor", "higher", "lower"}, {"factor", "higher", "lower"})
    return Contrast(_str(d["factor"], f"{path}.factor"), _str(d["higher"], f"{path}.higher"), _str(d["lower"], f"{path}.lower"))


def _direction(x: Any, path: str) -> DirectionConvention:
    d = _obj(x, path, {"factor", "higher", "lower", "moderator", "option"}, {"factor", "higher", "lower"})
    mod = d.get("moderator")
    opt = d.get("option")
    return DirectionConvention(
        _str(d["factor"], f"{path}.factor"), _str(d["higher"], f"{path}.higher"), _str(d["lower"], f"{path}.lower"),
        None if mod is None else _contrast(mod, f"{path}.moderator"),
        None if opt is None else _str(opt, f"{path}.option"),
    )


_NOTE_CODES = {"NA*": "na_star", "NA**": "na_double_star", "na_star": "na_star", "na_double_star": "na_double_star"}


def _original(x: Any, path: str) -> OriginalFinding:
    d = _obj(x, path, {"human_p", "direction_sign", "effect_size", "recorded_outcome", "note"}, {"human_p"})
    try:
        hp = PValue.parse(d["human_p"])
    except ValueError as e:
        raise SchemaError(f"{path}.human_p", str(e)) from None
    sign = d.get("direction_sign")
    if sign is not None and sign not in (-1, 1):
        raise SchemaError(f"{path}.direction_sign", "expected -1 or 1")
    es = d.get("effect_size")
    effect = None
    if es is not None:
        ed = _obj(es, f"{path}.effect_size", {"kind", "value"}, {"kind", "value"})
        effect = OriginalEffectSize(_str(ed["kind"], f"{path}.effect_size.kind"), _num(ed["value"], f"{path}.effect_size.value"))
    outcome = d.get("recorded_outcome")
    if outcome is not None:
        outcome = _str(outcome, f"{path}.recorded_outcome").lower()
        if outcome not in ("yes", "no"):
            raise SchemaError(f"{path}.recorded_outcome", "expected 'yes' or 'no'")
    note = d.get("note")
    if note is not None:
        if note not in _NOTE_CODES:
            raise SchemaError(f"{path}.note", f"unknown note {note!r}")
        note = _NOTE_CODES[note]
    return OriginalFinding(hp, sign, effect, outcome, note)


def _finding(x: Any, path: str) -> FindingPlan:
    d = _obj(x, path, {"finding_id", "dv", "effect", "test", "direction", "original"},
             {"finding_id", "dv", "effect", "test", "direction", "original"})
    e = d["effect"]
    if not isinstance(e, Mapping) or "kind" not in e:
        raise SchemaError(f"{path}.effect", "expected object with a 'kind' field")
    if e["kind"] == "main":
        ed = _obj(e, f"{path}.effect", {"kind", "factor"}, {"kind", "factor"})
        effect = Effect("main", (_str(ed["factor"], f"{path}.effect.factor"),))
    elif e["kind"] == "interaction":
        ed = _obj(e, f"{path}.effect", {"kind", "factors"}, {"kind", "factors"})
        fs = _list(ed["factors"], f"{path}.effect.factors")
        effect = Effect("interaction", tuple(_str(f, f"{path}.effect.factors[{i}]") for i, f in enumerate(fs)))
    else:
        raise SchemaError(f"{path}.effect.kind", f"expected 'main' or 'interaction', got {e['kind']!r}")
    test = _str(d["test"], f"{path}.test")
    if test not in TESTS:
        raise SchemaError(f"{path}.test", f"unknown test {test!r}; expected one of {', '.join(TESTS)}")
    return FindingPlan(_str(d["finding_id"], f"{path}.finding_id"), _str(d["dv"], f"{path}.dv"), effect, test,
                       _direction(d["direction"], f"{path}.direction"), _original(d["original"], f"{path}.original"))


def _manipulation_check(x: Any, path: str) -> ManipulationCheck:
    d = _obj(x, path, {"measure_id", "expected_direction", "alpha"}, {"measure_id", "expected_direction"})
    return ManipulationCheck(_str(d["measure_id"], f"{path}.measure_id"),
                             _direction(d["expected_direction"], f"{path}.expected_direction"),
                             _num(d.get("alpha", 0.05), f"{path}.alpha"))


# Violation codes that are invariants of the types themselves; parse_study_spec
# rejects them.  NO_MANIPULATION and UNRESOLVED_ATTACHMENT concern runnability.
_TYPE_INVARIANT_CODES = frozenset({
    "DUPLICATE_ID", "TOO_FEW_LEVELS", "UNKNOWN_LEVEL", "INCOMPLETE_ASSIGNMENT", "INCOMPLETE_CROSSING",
    "DUPLICATE_CELL", "N_TOO_SMALL", "DANGLING_REFERENCE", "BAD_SCALE", "BAD_WEIGHTS", "BAD_RANGE",
    "EMPTY_STIMULUS", "TEST_MISMATCH", "TEMPLATE_PLACEHOLDER", "BAD_ALPHA", "BAD_CROSSING",
})


def parse_study_spec(document: str | bytes | Mapping[str, Any], strict: bool = True) -> StudySpec:
    """Parse a study document (JSON text or an already-decoded mapping).

    With ``strict`` (the default) every type invariant is enforced and the
    first violation raises :class:`SemanticError`.  ``strict=False`` only
    checks the schema, leaving invariants to :func:`validate_study_spec`.

    Raises:
        SchemaError: unknown field, missing field, wrong type or invalid JSON.
        SemanticError: invariant violation (strict mode only).
    """
    if isinstance(document, (str, bytes)):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError("$", f"invalid JSON: {e}") from None
    else:
        data = document
    d = _obj(data, "$", _TOP_KEYS, _TOP_REQUIRED)
    n = _int(d["n"], "$.n")
    crossing = _str(d.get("crossing", "full"), "$.crossing")
    mc = d.get("manipulation_check")
    src = d.get("source_label")
    spec = StudySpec(
        study_id=_str(d["study_id"], "$.study_id"),
        factors=tuple(_factor(f, f"$.factors[{i}]") for i, f in enumerate(_list(d["factors"], "$.factors"))),
        conditions=tuple(_condition(c, f"$.conditions[{i}]") for i, c in enumerate(_list(d["conditions"], "$.conditions"))),
        measures=tuple(_measure(m, f"$.measures[{i}]") for i, m in enumerate(_list(d["measures"], "$.measures"))),
        sample=_sample(d["sample"], "$.sample"),
        n=n,
        analysis_plan=tuple(_finding(f, f"$.analysis_plan[{i}]") for i, f in enumerate(_list(d["analysis_plan"], "$.analysis_plan"))),
        manipulation_check=None if mc is None else _manipulation_check(mc, "$.manipulation_check"),
        source_label=None if src is None else _str(src, "$.source_label"),
        blind_terms=tuple(_str(t, f"$.blind_terms[{i}]") for i, t in enumerate(_list(d.get("blind_terms", []), "$.blind_terms"))),
        instructions=_str(d.get("instructions", ""), "$.instructions"),
        crossing=crossing,
    )
    if strict:
        for v in validate_study_spec(spec):
            if v.code in _TYPE_INVARIANT_CODES:
                raise SemanticError(v.path, v.message, v.code)
    return spec


def load_study(path: str | Path, strict: bool = True) -> StudySpec:
    return parse_study_spec(Path(path).read_text(encoding="utf-8"), strict=strict)


# ---------------------------------------------------------------- serialization


def _response_to_dict(r: ResponseType) -> dict:
    if isinstance(r, Likert):
        return {"type": "likert", "min": r.min, "max": r.max, "low_anchor": r.low_anchor, "high_anchor": r.high_anchor}
    if isinstance(r, NumericOpen):
        out: dict[str, Any] = {"type": "numeric_open", "units": r.units}
        if r.min is not None:
            out["min"] = r.min
        if r.max is not None:
            out["max"] = r.max
        return out
    if isinstance(r, Choice):
        return {"type": "choice", "options": list(r.options)}
    return {"type": "free_text"}


def _dist_to_dict(d: Distribution) -> dict:
    if isinstance(d, Categorical):
        return {"type": "categorical", "weights": dict(d.weights)}
    if isinstance(d, NumericUniform):
        return {"type": "numeric_uniform", "lo": d.lo, "hi": d.hi, "integer_valued": d.integer_valued}
    if isinstance(d, NumericEmpirical):
        return {"type": "numeric_empirical", "values": [[v, w] for v, w in d.values]}
    return {"type": "joint", "attributes": list(d.attributes),
            "rows": [{"values": dict(vals), "weight": w} for vals, w in d.rows]}


def _direction_to_dict(d: DirectionConvention) -> dict:
    out: dict[str, Any] = {"factor": d.factor, "higher": d.higher, "lower": d.lower}
    if d.moderator is not None:
        out["moderator"] = {"factor": d.moderator.factor, "higher": d.moderator.higher, "lower": d.moderator.lower}
    if d.option is not None:
        out["option"] = d.option
    return out


def _original_to_dict(o: OriginalFinding) -> dict:
    out: dict[str, Any] = {"human_p": o.human_p.to_json()}
    if o.direction_sign is not None:
        out["direction_sign"] = o.direction_sign
    if o.effect_size is not None:
        out["effect_size"] = {"kind": o.effect_size.kind, "value": o.effect_size.value}
    if o.recorded_outcome is not None:
        out["recorded_outcome"] = o.recorded_outcome
    if o.note is not None:
        out["note"] = o.note
    return out


def study_to_dict(spec: StudySpec) -> dict[str, Any]:
    """Inverse of :func:`parse_study_spec`."""
    out: dict[str, Any] = {
        "study_id": spec.study_id,
        "factors": [{"name": f.name, "levels": list(f.levels)} for f in spec.factors],
        "conditions": [
            {
                "condition_id": c.condition_id,
                "levels": dict(c.level_assignment),
                "stimuli": [
                    {"kind": s.kind, "payload": s.payload, **({"caption": s.caption} if s.caption is not None else {})}
                    for s in c.stimuli
                ],
            }
            for c in spec.conditions
        ],
        "measures": [
            {"measure_id": m.measure_id, "prompt_text": m.prompt_text, "response": _response_to_dict(m.response)}
            for m in spec.measures
        ],
        "sample": {
            "attributes": [{"name": a.name, "distribution": _dist_to_dict(a.distribution)} for a in spec.sample.attributes],
            "description_template": spec.sample.description_template,
        },
        "n": spec.n,
        "analysis_plan": [
            {
                "finding_id": f.finding_id,
                "dv": f.dv,
                "effect": {"kind": "main", "factor": f.effect.factors[0]} if f.effect.kind == "main"
                else {"kind": "interaction", "factors": list(f.effect.factors)},
                "test": f.test,
                "direction": _direction_to_dict(f.direction),
                "original": _original_to_dict(f.original),
            }
            for f in spec.analysis_plan
        ],
        "crossing": spec.crossing,
        "instructions": spec.instructions,
        "blind_terms": list(spec.blind_terms),
    }
    if spec.manipulation_check is not None:
        mc = spec.manipulation_check
        out["manipulation_check"] = {"measure_id": mc.measure_id,
                                     "expected_direction": _direction_to_dict(mc.expected_direction),
                                     "alpha": mc.alpha}
    if spec.source_label is not None:
        out["source_label"] = spec.source_label
    return out


def dump_study(spec: StudySpec) -> str:
    return json.dumps(study_to_dict(spec), indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.path}: {self.message}"


def template_fields(template: str) -> list[str]:
    return [name for _, name, _, _ in string.Formatter().parse(template) if name]


def _attachment_resolves(payload: str, base_dir: Path | None) -> bool:
    parsed = urlparse(payload)
    if parsed.scheme in ("http", "https", "data"):
        return True
    if parsed.scheme == "file":
        return Path(parsed.path).exists()
    p = Path(payload)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p.exists()


def validate_study_spec(spec: StudySpec, base_dir: str | Path | None = None) -> list[Violation]:
    """Check every invariant of a study and report violations as data.

    Attachment stimuli are resolved relative to ``base_dir`` (the directory
    of the study file) when given, else relative to the working directory.
    An empty list means the study is runnable.
    """
    out: list[Violation] = []
    add = lambda code, path, msg: out.append(Violation(code, path, msg))  # noqa: E731
    base = Path(base_dir) if base_dir is not None else None

    def dupes(items):
        return sorted(k for k, c in Counter(items).items() if c > 1)

    factors = {f.name: f for f in spec.factors}
    for name in dupes(f.name for f in spec.factors):
        add("DUPLICATE_ID", "$.factors", f"factor name {name!r} repeated")
    for i, f in enumerate(spec.factors):
        if len(f.levels) < 2:
            add("TOO_FEW_LEVELS", f"$.factors[{i}].levels", f"factor {f.name!r} needs at least 2 levels")
        for lev in dupes(f.levels):
            add("DUPLICATE_ID", f"$.factors[{i}].levels", f"level {lev!r} repeated in factor {f.name!r}")

    for cid in dupes(c.condition_id for c in spec.conditions):
        add("DUPLICATE_ID", "$.conditions", f"condition_id {cid!r} repeated")
    cells: Counter = Counter()
    for i, c in enumerate(spec.conditions):
        cp = f"$.conditions[{i}]"
        for fname, lev in c.level_assignment.items():
            if fname not in factors:
                add("DANGLING_REFERENCE", f"{cp}.levels.{fname}", f"unknown factor {fname!r}")
            elif lev not in factors[fname].levels:
                add("UNKNOWN_LEVEL", f"{cp}.levels.{fname}", f"{lev!r} is not a level of {fname!r}")
        for fname in factors:
            if fname not in c.level_assignment:
                add("INCOMPLETE_ASSIGNMENT", f"{cp}.levels", f"condition {c.condition_id!r} has no level for {fname!r}")
        cells[tuple(sorted(c.level_assignment.items()))] += 1
        for j, s in enumerate(c.stimuli):
            sp = f"{cp}.stimuli[{j}]"
            if s.kind == "text" and not s.payload.strip():
                add("EMPTY_STIMULUS", f"{sp}.payload", "text stimulus is empty")
            if s.is_attachment and not _attachment_resolves(s.payload, base):
                add("UNRESOLVED_ATTACHMENT", f"{sp}.payload", f"cannot resolve {s.payload!r}")
    for cell, count in cells.items():
        if count > 1:
            add("DUPLICATE_CELL", "$.conditions", f"{count} conditions share levels {dict(cell)}")

    if spec.crossing not in ("full", "subset"):
        add("BAD_CROSSING", "$.crossing", f"expected 'full' or 'subset', got {spec.crossing!r}")
    elif spec.crossing == "full" and spec.factors:
        expected = math.prod(len(f.levels) for f in spec.factors)
        if len(cells) < expected:
            add("INCOMPLETE_CROSSING", "$.conditions",
                f"full crossing needs {expected} conditions, found {len(cells)}; declare \"crossing\": \"subset\" otherwise")
    if len(spec.conditions) < 2:
        add("NO_MANIPULATION", "$.conditions", "a true experiment needs at least two manipulated conditions")
    if spec.n < 1:
        add("N_TOO_SMALL", "$.n", "n must be positive")
    elif spec.n < len(spec.conditions):
        add("N_TOO_SMALL", "$.n", f"n={spec.n} is smaller than the {len(spec.conditions)} conditions")

    measures = {m.measure_id: m for m in spec.measures}
    for mid in dupes(m.measure_id for m in spec.measures):
        add("DUPLICATE_ID", "$.measures", f"measure_id {mid!r} repeated")
    for i, m in enumerate(spec.measures):
        r = m.response
        rp = f"$.measures[{i}].response"
        if isinstance(r, Likert) and not r.min < r.max:
            add("BAD_SCALE", rp, f"likert min {r.min} must be below max {r.max}")
        if isinstance(r, Choice) and len(r.options) < 2:
            add("BAD_SCALE", f"{rp}.options", "choice needs at least 2 options")
        if isinstance(r, NumericOpen) and r.min is not None and r.max is not None and r.min > r.max:
            add("BAD_SCALE", rp, f"numeric min {r.min} exceeds max {r.max}")

    provided: list[str] = []
    for i, a in enumerate(spec.sample.attributes):
        ap = f"$.sample.attributes[{i}]"
        d = a.distribution
        provided.extend(a.provides)
        if isinstance(d, Categorical):
            ws = d.weights.values()
            if not d.weights or any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > WEIGHT_TOL:
                add("BAD_WEIGHTS", f"{ap}.distribution.weights",
                    f"weights of attribute {a.name!r} must be non-negative and sum to 1 (sum={sum(ws):.12g})")
        elif isinstance(d, NumericUniform):
            if d.lo > d.hi:
                add("BAD_RANGE", f"{ap}.distribution", f"attribute {a.name!r} has lo {d.lo} > hi {d.hi}")
            if d.integer_valued and math.ceil(d.lo) > math.floor(d.hi):
                add("BAD_RANGE", f"{ap}.distribution", f"attribute {a.name!r} admits no integer value")
        elif isinstance(d, NumericEmpirical):
            ws = [w for _, w in d.values]
            if not ws or any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > WEIGHT_TOL:
                add("BAD_WEIGHTS", f"{ap}.distribution.values",
                    f"weights of attribute {a.name!r} must be non-negative and sum to 1 (sum={sum(ws):.12g})")
        elif isinstance(d, Joint):
            ws = [w for _, w in d.rows]
            if not ws or any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > WEIGHT_TOL:
                add("BAD_WEIGHTS", f"{ap}.distribution.rows",
                    f"joint weights of {a.name!r} must be non-negative and sum to 1 (sum={sum(ws):.12g})")
            for j, (vals, _) in enumerate(d.rows):
                if sorted(k for k, _ in vals) != sorted(d.attributes):
                    add("BAD_WEIGHTS", f"{ap}.distribution.rows[{j}]", "row must assign every joint attribute")
    for name in dupes(provided):
        add("DUPLICATE_ID", "$.sample.attributes", f"attribute {name!r} defined twice")
    for name in template_fields(spec.sample.description_template):
        if name not in provided:
            add("TEMPLATE_PLACEHOLDER", "$.sample.description_template", f"placeholder {{{name}}} names no attribute")

    def check_contrast(c: Contrast | DirectionConvention, path: str) -> None:
        if c.factor not in factors:
            add("DANGLING_REFERENCE", f"{path}.factor", f"unknown factor {c.factor!r}")
            return
        for lev in (c.higher, c.lower):
            if lev not in factors[c.factor].levels:
                add("DANGLING_REFERENCE", path, f"{lev!r} is not a level of {c.factor!r}")
        if c.higher == c.lower:
            add("DANGLING_REFERENCE", path, "higher and lower levels must differ")

    for fid in dupes(f.finding_id for f in spec.analysis_plan):
        add("DUPLICATE_ID", "$.analysis_plan", f"finding_id {fid!r} repeated")
    for i, f in enumerate(spec.analysis_plan):
        fp = f"$.analysis_plan[{i}]"
        if f.dv not in measures:
            add("DANGLING_REFERENCE", f"{fp}.dv", f"unknown measure {f.dv!r}")
        for fname in f.effect.factors:
            if fname not in factors:
                add("DANGLING_REFERENCE", f"{fp}.effect", f"unknown factor {fname!r}")
        check_contrast(f.direction, f"{fp}.direction")
        if f.effect.kind == "interaction":
            if len(f.effect.factors) != 2 or f.effect.factors[0] == f.effect.factors[1]:
                add("TEST_MISMATCH", f"{fp}.effect", "interaction needs two distinct factors")
            if f.test not in ("anova2", "ols"):
                add("TEST_MISMATCH", f"{fp}.test", f"interaction effects need anova2 or ols, not {f.test}")
            if f.direction.moderator is None:
                add("DANGLING_REFERENCE", f"{fp}.direction.moderator", "interaction direction needs a moderator contrast")
            else:
                check_contrast(f.direction.moderator, f"{fp}.direction.moderator")
        elif f.effect.factors and f.direction.factor != f.effect.factors[0]:
            add("DANGLING_REFERENCE", f"{fp}.direction.factor", "direction must refer to the effect's factor")
        if f.test == "anova2" and len(spec.factors) < 2:
            add("TEST_MISMATCH", f"{fp}.test", "anova2 needs at least two factors")
        if f.test == "chi2":
            m = measures.get(f.dv)
            if m is not None and not isinstance(m.response, Choice):
                add("TEST_MISMATCH", f"{fp}.test", "chi2 needs a choice-type DV")
            elif m is not None and f.direction.option is not None and f.direction.option not in m.response.options:
                add("DANGLING_REFERENCE", f"{fp}.direction.option", f"unknown option {f.direction.option!r}")
        elif f.dv in measures and isinstance(measures[f.dv].response, (Choice, FreeText)) and f.test != "chi2":
            add("TEST_MISMATCH", f"{fp}.test", f"{f.test} needs a numeric DV")

    if spec.manipulation_check is not None:
        mc = spec.manipulation_check
        if mc.measure_id not in measures:
            add("DANGLING_REFERENCE", "$.manipulation_check.measure_id", f"unknown measure {mc.measure_id!r}")
        check_contrast(mc.expected_direction, "$.manipulation_check.expected_direction")
        if not 0.0 < mc.alpha < 1.0:
            add("BAD_ALPHA", "$.manipulation_check.alpha", "alpha must lie in (0, 1)")
    return out


# ---------------------------------------------------------------- findings table

FINDINGS_HEADER = ("paper_id", "study_id", "n", "human_p", "ai_p", "finding_label",
                   "effect_kind", "recorded_outcome", "note")
_REQUIRED_COLUMNS = {"paper_id", "study_id", "n", "human_p", "ai_p", "recorded_outcome"}
_OPTIONAL_COLUMNS = {"finding_label", "effect_kind", "note", "direction_sign", "effect_size_kind", "effect_size_value"}


@dataclass(frozen=True)
class FindingRecord:
    """One row of a findings table: an original result and its replication."""

    row: int
    paper_id: str
    study_id: str
    n: int
    finding_label: str
    effect_kind: str
    replication_p: PValue | None
    original: OriginalFinding

    @property
    def key(self) -> str:
        return f"{self.paper_id}/{self.study_id}/{self.finding_label}"


def infer_effect_kind(label: str) -> str:
    return "interaction" if label.strip().lower().startswith("interaction") else "main"


def parse_findings_table(document: str) -> list[FindingRecord]:
    """Parse a findings CSV (see :data:`FINDINGS_HEADER`).

    ``ai_p`` may hold ``NA*``/``NA**`` instead of a p-value.

    Raises:
        RowError: malformed p-value, unknown outcome label or bad column set.
    """
    reader = csv.DictReader(io.StringIO(document.lstrip("﻿")))
    cols = set(reader.fieldnames or ())
    if not cols:
        return []
    missing = _REQUIRED_COLUMNS - cols
    if missing:
        raise RowError(1, f"missing columns: {', '.join(sorted(missing))}")
    unknown = cols - _REQUIRED_COLUMNS - _OPTIONAL_COLUMNS
    if unknown:
        raise RowError(1, f"unknown columns: {', '.join(sorted(unknown))}")
    out = []
    for i, raw in enumerate(reader, start=2):
        r = {k: (v or "").strip() for k, v in raw.items() if k is not None}
        try:
            human_p = PValue.parse(r["human_p"])
        except ValueError:
            raise RowError(i, f"malformed human_p {r['human_p']!r}") from None
        note_text = r.get("note", "")
        ai = r["ai_p"]
        if ai in ("NA*", "NA**"):
            note_text = note_text or ai
            ai_p = None
        elif ai == "":
            ai_p = None
        else:
            try:
                ai_p = PValue.parse(ai)
            except ValueError:
                raise RowError(i, f"malformed ai_p {ai!r}") from None
        if note_text and note_text not in ("NA*", "NA**"):
            raise RowError(i, f"unknown note {note_text!r}")
        if ai_p is None and not note_text:
            raise RowError(i, "ai_p is empty but no NA note explains it")
        outcome = r["recorded_outcome"].lower()
        if outcome not in ("yes", "no", ""):
            raise RowError(i, f"unknown outcome label {r['recorded_outcome']!r}")
        label = r.get("finding_label", "")
        kind = r.get("effect_kind", "") or infer_effect_kind(label)
        if kind not in ("main", "interaction"):
            raise RowError(i, f"unknown effect_kind {kind!r}")
        try:
            n = int(r["n"])
        except ValueError:
            raise RowError(i, f"malformed n {r['n']!r}") from None
        sign = r.get("direction_sign", "")
        effect = None
        if r.get("effect_size_value", ""):
            try:
                effect = OriginalEffectSize(r.get("effect_size_kind", "") or "cohen_d", float(r["effect_size_value"]))
            except ValueError:
                raise RowError(i, f"malformed effect size {r['effect_size_value']!r}") from None
        original = OriginalFinding(
            human_p=human_p,
            direction_sign=int(sign) if sign else None,
            effect_size=effect,
            recorded_outcome=outcome or None,
            note=_NOTE_CODES.get(note_text),
        )
        out.append(FindingRecord(i, r["paper_id"], r["study_id"], n, label, kind, ai_p, original))
    return out


def load_findings_table(path: str | Path) -> list[FindingRecord]:
    return parse_findings_table(Path(path).read_text(encoding="utf-8"))
