"""The Retrieve-Realize-Repeat output format.

Generations interleave per-sentence plans with realizations:

    ### Entities 1: {{span}} {{span}}
    ### Sentence 1: <sentence 1>
    ### Entities 2: ...

The final summary is the sentence lines joined in order. The strict parser
enforces the exact alternating grammar (it verifies oracle targets); the
lenient parser harvests whatever sentence lines exist and records every
deviation as a warning, since fine-tuned models occasionally break format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .entity import EntityExtractor, EmbeddingProvider, EntitySpan, cosine_similarity, embed, extract_entities
from .errors import SpeerError
from .esg import ESG, SYNONYM_THRESHOLD
from .guide import TaggedSource, strip_tags

DEFAULT_ABBREVIATIONS = ("Dr.", "mg.", "vs.", "pt.")

_ENTITIES_RE = re.compile(r"^### Entities (\d+):(.*)$")
_SENTENCE_RE = re.compile(r"^### Sentence (\d+):(.*)$")
_SEGMENT_RE = re.compile(r"^( \{\{[^{}\n]*\}\})*$")
_SPAN_RE = re.compile(r"\{\{([^{}\n]*)\}\}")


class R3ParseError(SpeerError):
    """Strict-mode parse failure; the message cites the first offending line."""


@dataclass(frozen=True)
class SentencePlan:
    index: int
    planned_entities: tuple[str, ...]
    sentence: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("plan index must be >= 1")
        if not self.sentence.strip():
            raise ValueError("plan sentence must be non-empty")


@dataclass(frozen=True)
class SpeerOutput:
    plans: tuple[SentencePlan, ...]

    def __post_init__(self):
        indices = [p.index for p in self.plans]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("plan indices must be strictly increasing")

    @property
    def summary(self) -> str:
        return " ".join(p.sentence for p in self.plans)


@dataclass(frozen=True)
class ParseResult:
    output: SpeerOutput
    warnings: tuple[str, ...]


def serialize_r3(plans: Sequence[SentencePlan] | SpeerOutput) -> str:
    """Two lines per plan; empty plans render a bare entities line. The result
    is newline-terminated (or empty for zero plans)."""
    if isinstance(plans, SpeerOutput):
        plans = plans.plans
    lines = []
    for plan in plans:
        if "\n" in plan.sentence:
            raise ValueError(f"plan {plan.index}: sentence contains a newline")
        for entity in plan.planned_entities:
            if any(c in entity for c in "{}\n"):
                raise ValueError(f"plan {plan.index}: entity {entity!r} contains forbidden characters")
        entities = "".join(" {{" + entity + "}}" for entity in plan.planned_entities)
        lines.append(f"### Entities {plan.index}:{entities}")
        lines.append(f"### Sentence {plan.index}: {plan.sentence}")
    return "\n".join(lines) + "\n" if lines else ""


def _parse_entity_segment(segment: str) -> list[str]:
    """Parse the text after '### Entities k:'; raises ValueError with a reason."""
    if not _SEGMENT_RE.match(segment):
        if segment.count("{{") > segment.count("}}"):
            raise ValueError("unclosed '{{' in entities segment")
        raise ValueError("malformed entities segment")
    return [m.group(1) for m in _SPAN_RE.finditer(segment)]


def _split_lines(text: str) -> list[str]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_strict(text: str) -> SpeerOutput:
    lines = _split_lines(text)
    plans: list[SentencePlan] = []
    expected = 1
    i = 0
    while i < len(lines):
        line_no = i + 1
        entities_match = _ENTITIES_RE.match(lines[i])
        if not entities_match:
            raise R3ParseError(f"line {line_no}: expected '### Entities {expected}:' line")
        if int(entities_match.group(1)) != expected:
            raise R3ParseError(
                f"line {line_no}: expected index {expected}, found {entities_match.group(1)}"
            )
        try:
            entities = _parse_entity_segment(entities_match.group(2))
        except ValueError as exc:
            raise R3ParseError(f"line {line_no}: {exc}") from exc

        i += 1
        line_no = i + 1
        if i >= len(lines) or not (sentence_match := _SENTENCE_RE.match(lines[i])):
            raise R3ParseError(f"line {line_no}: expected '### Sentence {expected}:' line")
        if int(sentence_match.group(1)) != expected:
            raise R3ParseError(
                f"line {line_no}: expected index {expected}, found {sentence_match.group(1)}"
            )
        sentence = sentence_match.group(2)
        if sentence.startswith(" "):
            sentence = sentence[1:]
        if not sentence.strip():
            raise R3ParseError(f"line {line_no}: empty sentence")
        plans.append(SentencePlan(expected, tuple(entities), sentence))
        expected += 1
        i += 1
    return SpeerOutput(plans=tuple(plans))


def _parse_lenient(text: str) -> ParseResult:
    lines = _split_lines(text)
    plans: list[SentencePlan] = []
    warnings: list[str] = []
    pending: tuple[int, list[str]] | None = None  # (line_no, entities)
    for i, line in enumerate(lines):
        line_no = i + 1
        if entities_match := _ENTITIES_RE.match(line):
            if pending is not None:
                warnings.append(f"line {pending[0]}: entities line without a following sentence")
            try:
                entities = _parse_entity_segment(entities_match.group(2))
            except ValueError as exc:
                warnings.append(f"line {line_no}: {exc}; treating plan as empty")
                entities = []
            pending = (line_no, entities)
        elif sentence_match := _SENTENCE_RE.match(line):
            sentence = sentence_match.group(2)
            if sentence.startswith(" "):
                sentence = sentence[1:]
            if not sentence.strip():
                warnings.append(f"line {line_no}: empty sentence skipped")
                continue
            declared = int(sentence_match.group(1))
            if declared != len(plans) + 1:
                warnings.append(
                    f"line {line_no}: sentence index {declared} out of order "
                    f"(expected {len(plans) + 1})"
                )
            entities = pending[1] if pending is not None else []
            pending = None
            plans.append(SentencePlan(len(plans) + 1, tuple(entities), sentence))
        elif not line.strip():
            warnings.append(f"line {line_no}: ignored blank line")
        else:
            warnings.append(f"line {line_no}: ignored unrecognized line")
    if pending is not None:
        warnings.append(f"line {pending[0]}: entities line without a following sentence")
    return ParseResult(output=SpeerOutput(plans=tuple(plans)), warnings=tuple(warnings))


def parse_r3(text: str, mode: str = "strict") -> ParseResult:
    """Parse generated text. Strict mode raises R3ParseError on any deviation
    from the template; lenient mode never fails and reports deviations as
    warnings. Both return the summary as the in-order sentence concatenation."""
    if mode == "strict":
        return ParseResult(output=_parse_strict(text), warnings=())
    if mode == "lenient":
        return _parse_lenient(text)
    raise ValueError(f"unknown parse mode {mode!r}")


def split_sentences(
    text: str, abbreviations: Sequence[str] = DEFAULT_ABBREVIATIONS
) -> list[tuple[int, int]]:
    """Sentence spans (start, end): a sentence ends at . ! or ? followed by
    whitespace and an uppercase letter or digit, unless the terminator closes
    a known abbreviation. Spans are trimmed of surrounding whitespace."""
    stoplist = {a.lower() for a in abbreviations}
    boundaries = []
    i = 0
    while i < len(text):
        if text[i] in ".!?":
            j = i + 1
            while j < len(text) and text[j].isspace():
                j += 1
            if j > i + 1 and j < len(text) and (text[j].isupper() or text[j].isdigit()):
                word_start = i
                while word_start > 0 and not text[word_start - 1].isspace():
                    word_start -= 1
                if text[word_start : i + 1].lower() not in stoplist:
                    boundaries.append((i + 1, j))
        i += 1

    spans = []
    start = 0
    for end, next_start in boundaries:
        spans.append((start, end))
        start = next_start
    spans.append((start, len(text)))

    trimmed = []
    for raw_start, raw_end in spans:
        while raw_start < raw_end and text[raw_start].isspace():
            raw_start += 1
        while raw_end > raw_start and text[raw_end - 1].isspace():
            raw_end -= 1
        if raw_start < raw_end:
            trimmed.append((raw_start, raw_end))
    return trimmed


def _normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def extract_oracle_plans(
    reference: str | None,
    salient_esgs: Sequence[ESG],
    extractor: EntityExtractor,
) -> list[SentencePlan]:
    """Per reference sentence, the in-order mentions whose surfaces belong to
    a salient ESG (duplicates within a sentence kept)."""
    if reference is None or not reference.strip():
        raise ValueError("oracle plan extraction requires a reference")
    salient_surfaces = {surface for esg in salient_esgs for surface in esg.surfaces}
    spans = extract_entities("reference", reference, extractor)
    plans = []
    for index, (start, end) in enumerate(split_sentences(reference), start=1):
        entities = tuple(
            span.surface
            for span in spans
            if start <= span.start < end and span.surface in salient_surfaces
        )
        plans.append(SentencePlan(index, entities, _normalize_whitespace(reference[start:end])))
    return plans


@dataclass(frozen=True)
class EntityCheck:
    surface: str
    grounded: bool  # matches a tagged source span (exactly or as a synonym)
    grounded_exact: bool
    realized: bool  # appears among the entities extracted from the sentence
    realized_exact: bool


@dataclass(frozen=True)
class PlanCheck:
    index: int
    entities: tuple[EntityCheck, ...]
    unplanned: tuple[str, ...]  # sentence mentions matching no planned entity


@dataclass(frozen=True)
class PlanValidationReport:
    plan_checks: tuple[PlanCheck, ...]
    planned_total: int
    grounded_total: int
    realized_total: int
    unplanned_total: int

    @property
    def grounded_fraction(self) -> float:
        return 1.0 if self.planned_total == 0 else self.grounded_total / self.planned_total

    @property
    def realized_fraction(self) -> float:
        return 1.0 if self.planned_total == 0 else self.realized_total / self.planned_total


def tag_surfaces(tagged: TaggedSource) -> list[str]:
    """Unique surfaces inside {{ }} tags, in first-tag order."""
    surfaces: list[str] = []
    seen: set[str] = set()
    for span in tagged.tagged_spans:
        surface = tagged.text[span.start + 2 : span.end - 2]
        if surface not in seen:
            seen.add(surface)
            surfaces.append(surface)
    return surfaces


def _matches(
    surface: str,
    candidates: Sequence[str],
    provider: EmbeddingProvider,
    threshold: float,
) -> tuple[bool, bool]:
    """(matched_at_all, matched_exactly) of surface against candidate surfaces."""
    if surface in candidates:
        return True, True
    if not surface.strip():
        return False, False
    vector = embed(surface, provider)
    for candidate in candidates:
        if cosine_similarity(vector, embed(candidate, provider)) >= threshold:
            return True, False
    return False, False


def validate_plans(
    output: SpeerOutput,
    tagged: TaggedSource,
    extractor: EntityExtractor,
    provider: EmbeddingProvider,
    threshold: float = SYNONYM_THRESHOLD,
) -> PlanValidationReport:
    """Check that each planned entity is grounded in a tagged span and realized
    in its sentence, and list sentence mentions that were never planned.

    Exact and synonym matches are reported separately: `grounded`/`realized`
    accept either, the *_exact flags require verbatim surfaces.
    """
    available = tag_surfaces(tagged)
    checks = []
    planned_total = grounded_total = realized_total = unplanned_total = 0
    for plan in output.plans:
        sentence_surfaces = [
            span.surface
            for span in extract_entities(f"sentence-{plan.index}", plan.sentence, extractor)
        ]
        entity_checks = []
        for entity in plan.planned_entities:
            grounded, grounded_exact = _matches(entity, available, provider, threshold)
            realized, realized_exact = _matches(entity, sentence_surfaces, provider, threshold)
            entity_checks.append(
                EntityCheck(entity, grounded, grounded_exact, realized, realized_exact)
            )
            planned_total += 1
            grounded_total += grounded
            realized_total += realized
        unplanned = tuple(
            surface
            for surface in sentence_surfaces
            if not _matches(surface, plan.planned_entities, provider, threshold)[0]
        )
        unplanned_total += len(unplanned)
        checks.append(PlanCheck(plan.index, tuple(entity_checks), unplanned))
    return PlanValidationReport(
        plan_checks=tuple(checks),
        planned_total=planned_total,
        grounded_total=grounded_total,
        realized_total=realized_total,
        unplanned_total=unplanned_total,
    )


def mock_generate(tagged: TaggedSource, salient_esgs: Sequence[ESG]) -> SpeerOutput:
    """Deterministic stand-in generator for LLM-free end-to-end runs.

    Walks salient ESGs in frequency-rank order; each not-yet-covered ESG
    contributes one plan holding its first tagged mention and the source
    sentence containing it (tags stripped). Emitting a sentence covers every
    ESG tagged inside it, so no ESG is planned twice.
    """
    sentence_spans = split_sentences(tagged.text)
    spans_by_esg: dict[int, list] = {}
    for span in tagged.tagged_spans:
        spans_by_esg.setdefault(span.esg_id, []).append(span)

    ordered = sorted(
        salient_esgs,
        key=lambda e: (e.freq_rank if e.freq_rank is not None else float("inf"), e.esg_id),
    )
    covered: set[int] = set()
    plans = []
    for esg in ordered:
        if esg.esg_id in covered or esg.esg_id not in spans_by_esg:
            continue
        first = spans_by_esg[esg.esg_id][0]
        bounds = next(
            ((s, e) for s, e in sentence_spans if s <= first.start < e),
            (0, len(tagged.text)),
        )
        sentence = _normalize_whitespace(strip_tags(tagged.text[bounds[0] : bounds[1]]))
        surface = tagged.text[first.start + 2 : first.end - 2]
        plans.append(SentencePlan(len(plans) + 1, (surface,), sentence))
        covered.update(
            span.esg_id
            for span in tagged.tagged_spans
            if bounds[0] <= span.start and span.end <= bounds[1]
        )
    return SpeerOutput(plans=tuple(plans))
