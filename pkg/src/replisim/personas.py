"""Persona populations: quota sampling, condition assignment and prompt construction.

Every random choice is derived from an explicit integer seed through
``numpy.random.SeedSequence``.  Per-persona draws use a generator keyed by
the persona index, so generating personas in any order or in parallel
gives the same population.
"""
from __future__ import annotations

import hashlib
import math
import string
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .study import (
    Categorical,
    Choice,
    Condition,
    FreeText,
    Joint,
    Likert,
    Measure,
    NumericEmpirical,
    NumericOpen,
    NumericUniform,
    SampleSpec,
    StudySpec,
)


class MissingAttribute(KeyError):
    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(f"description template placeholder {{{placeholder}}} has no attribute value")


class BlindingViolation(ValueError):
    def __init__(self, term: str, where: str):
        self.term = term
        self.where = where
        super().__init__(f"blinded term {term!r} would appear in the {where}")


@dataclass(frozen=True)
class Persona:
    persona_id: int
    attributes: dict[str, Any]
    description: str = ""
    condition_id: str | None = None


def _stable_key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed & (2**64 - 1), spawn_key=keys))


def largest_remainder(n: int, weights: Mapping[Any, float]) -> dict[Any, int]:
    """Apportion ``n`` units proportionally to ``weights``.

    Each value first receives ``floor(n * w)``; the leftover units go to the
    largest fractional remainders, ties broken by the value's lexical order.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    total = float(sum(weights.values()))
    quotas = {}
    remainders = []
    for key, w in weights.items():
        exact = n * w / total if total > 0 else 0.0
        q = math.floor(exact)
        quotas[key] = q
        remainders.append((-(exact - q), str(key), key))
    left = n - sum(quotas.values())
    for _, _, key in sorted(remainders)[:left]:
        quotas[key] += 1
    return quotas


def _quota_column(values: Sequence[Any], weights: Sequence[float], n: int, rng: np.random.Generator) -> list[Any]:
    quotas = largest_remainder(n, dict(zip(values, weights)))
    column: list[Any] = []
    for v in values:
        column.extend([v] * quotas[v])
    order = rng.permutation(n)
    return [column[i] for i in order]


def sample_personas(sample: SampleSpec, n: int, seed: int) -> list[Persona]:
    """Generate ``n`` unassigned personas matching the sample specification.

    Categorical (and joint) attributes are realized by exact largest-remainder
    quotas followed by a seeded shuffle; numeric attributes are drawn
    independently per persona.  Descriptions are rendered from the
    specification's template.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    columns: dict[str, list[Any]] = {}
    for idx, attr in enumerate(sample.attributes):
        dist = attr.distribution
        attr_rng = _rng(seed, 0, idx, _stable_key(attr.name))
        if isinstance(dist, Categorical):
            keys = sorted(dist.weights)
            columns[attr.name] = _quota_column(keys, [dist.weights[k] for k in keys], n, attr_rng)
        elif isinstance(dist, Joint):
            rows = sorted(dist.rows, key=lambda r: r[0])
            picked = _quota_column(list(range(len(rows))), [w for _, w in rows], n, attr_rng)
            for name in dist.attributes:
                columns[name] = [dict(rows[k][0])[name] for k in picked]
        elif isinstance(dist, (NumericUniform, NumericEmpirical)):
            col = []
            for pid in range(n):
                r = _rng(seed, 1, idx, pid)
                if isinstance(dist, NumericUniform):
                    if dist.integer_valued:
                        col.append(int(r.integers(math.ceil(dist.lo), math.floor(dist.hi) + 1)))
                    else:
                        col.append(float(r.uniform(dist.lo, dist.hi)) if dist.hi > dist.lo else float(dist.lo))
                else:
                    vals = [v for v, _ in dist.values]
                    ws = np.array([w for _, w in dist.values], dtype=float)
                    v = vals[int(r.choice(len(vals), p=ws / ws.sum()))]
                    col.append(int(v) if float(v).is_integer() else v)
            columns[attr.name] = col
        else:  # pragma: no cover - parse guarantees the union
            raise TypeError(f"unsupported distribution {dist!r}")

    names = sample.attribute_names()
    personas = []
    for pid in range(n):
        attrs = {name: columns[name][pid] for name in names}
        p = Persona(pid, attrs)
        personas.append(replace(p, description=render_persona_description(p, sample.description_template)))
    return personas


def assign_conditions(personas: Sequence[Persona], conditions: Sequence[Condition | str], seed: int) -> list[Persona]:
    """Balanced between-subjects assignment; cell sizes differ by at most one."""
    if not conditions:
        raise ValueError("need at least one condition")
    ids = [c if isinstance(c, str) else c.condition_id for c in conditions]
    n, k = len(personas), len(ids)
    rng = _rng(seed, 2)
    base, extra = divmod(n, k)
    bonus = set(rng.permutation(k)[:extra].tolist())
    slots: list[str] = []
    for j, cid in enumerate(ids):
        slots.extend([cid] * (base + (1 if j in bonus else 0)))
    order = rng.permutation(n)
    return [replace(p, condition_id=slots[order[i]]) for i, p in enumerate(personas)]


def _fmt_value(v: Any) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def render_persona_description(persona: Persona, template: str) -> str:
    """Substitute ``{attribute}`` placeholders with the persona's values."""
    parts = []
    for literal, name, spec, conv in string.Formatter().parse(template):
        parts.append(literal)
        if name is None:
            continue
        if name not in persona.attributes:
            raise MissingAttribute(name)
        value = persona.attributes[name]
        parts.append(format(value, spec) if spec else _fmt_value(value))
    return "".join(parts)


# ---------------------------------------------------------------- prompts


def response_directive(measure: Measure) -> str:
    r = measure.response
    if isinstance(r, Likert):
        anchors = ""
        if r.low_anchor or r.high_anchor:
            anchors = f" ({r.min} = {r.low_anchor}, {r.max} = {r.high_anchor})"
        return f"Answer with a single integer from {r.min} to {r.max}{anchors}."
    if isinstance(r, NumericOpen):
        units = f" in {r.units}" if r.units else ""
        bounds = ""
        if r.min is not None and r.max is not None:
            bounds = f" between {_fmt_value(r.min)} and {_fmt_value(r.max)}"
        elif r.min is not None:
            bounds = f" of at least {_fmt_value(r.min)}"
        return f"Answer with a single number{units}{bounds}."
    if isinstance(r, Choice):
        opts = "; ".join(f"{i} = {o}" for i, o in enumerate(r.options, start=1))
        return f"Answer with the number of exactly one option ({opts})."
    if isinstance(r, FreeText):
        return "Answer in one or two sentences on a single line."
    raise TypeError(f"unsupported response type {r!r}")


@dataclass(frozen=True)
class StimulusItem:
    kind: str
    text: str
    attachment: str | None = None


@dataclass(frozen=True)
class PromptBundle:
    """The three-part prompt sent for one persona: embodiment, stimuli, questions."""

    system_instructions: str
    stimulus_block: tuple[StimulusItem, ...]
    question_block: tuple[str, ...]
    blind_list: frozenset[str] = field(default_factory=frozenset)
    answer_format: str = ""

    def stimulus_text(self) -> str:
        return "\n\n".join(s.text for s in self.stimulus_block)

    def question_text(self) -> str:
        if not self.question_block:
            return ""
        return "\n".join(self.question_block) + ("\n\n" + self.answer_format if self.answer_format else "")

    def user_text(self) -> str:
        parts = [p for p in (self.stimulus_text(), self.question_text()) if p]
        return "\n\n".join(parts)

    def full_text(self) -> str:
        return self.system_instructions + "\n\n" + self.user_text()

    @property
    def attachments(self) -> list[StimulusItem]:
        return [s for s in self.stimulus_block if s.attachment is not None]

    def digest(self) -> str:
        h = hashlib.sha256(self.full_text().encode("utf-8"))
        for s in self.attachments:
            h.update(b"\0" + s.kind.encode() + b"\0" + s.attachment.encode("utf-8"))
        return h.hexdigest()


def blind_list(study: StudySpec) -> frozenset[str]:
    terms = set(t.strip() for t in study.blind_terms if t.strip())
    if study.source_label and study.source_label.strip():
        terms.add(study.source_label.strip())
    return frozenset(terms)


def _check_blind(text: str, terms: frozenset[str], where: str) -> None:
    low = text.lower()
    for term in sorted(terms):
        if term.lower() in low:
            raise BlindingViolation(term, where)


def build_prompt(persona: Persona, condition: Condition, measures: Sequence[Measure], study: StudySpec) -> PromptBundle:
    """Assemble the blinded prompt for one persona.

    Raises:
        BlindingViolation: a blind-list term (source label, title, authors,
            journal) would appear anywhere in the prompt.
    """
    if persona.condition_id is not None and persona.condition_id != condition.condition_id:
        raise ValueError(f"persona {persona.persona_id} is assigned to {persona.condition_id!r}, not {condition.condition_id!r}")
    system = (
        f"You are taking part in an online study as the following person: {persona.description}. "
        "Stay in character for the whole session and answer as this person would, "
        "based only on what is shown to you."
    )
    if study.instructions:
        system += "\n\nStudy instructions:\n" + study.instructions
    items = []
    for s in condition.stimuli:
        if s.kind == "text":
            text = s.payload if not s.caption else f"{s.caption}\n{s.payload}"
            items.append(StimulusItem("text", text))
        else:
            label = "Image" if s.kind == "image" else "Video"
            text = f"[{label} shown]" + (f" {s.caption}" if s.caption else "")
            items.append(StimulusItem(s.kind, text, s.payload))
    questions = tuple(
        f"Q{i}. {m.prompt_text} {response_directive(m)}" for i, m in enumerate(measures, start=1)
    )
    answer_format = (
        "After viewing the material above, reply with exactly one line per question, "
        "in order, formatted as 'Q<number>: <answer>', and nothing else."
        if questions else ""
    )
    stimuli = tuple(items)
    if stimuli:
        stimuli = (StimulusItem("text", "Please look carefully at the following material."),) + stimuli
    bundle = PromptBundle(system, stimuli, questions, blind_list(study), answer_format)
    _check_blind(bundle.system_instructions, bundle.blind_list, "system instructions")
    _check_blind(bundle.stimulus_text(), bundle.blind_list, "stimulus block")
    _check_blind(bundle.question_text(), bundle.blind_list, "question block")
    return bundle
