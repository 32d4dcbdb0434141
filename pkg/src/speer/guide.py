"""Model-input construction for the three guidance modes.

Non-guided inputs are instruction + source. Guided inputs append a list of
salient concepts grouped as PROBLEMS / TREATMENTS / TESTS, one line per group
member with its surfaces joined by "; ". The embedded-retrieval mode instead
wraps every salient mention in the source with {{ }} boundary tags so the
model can cite specific usages. Chat-template syntax is configuration, not
code: a small prefix/suffix table wraps the assembled input.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .entity import PROBLEM, TEST, TREATMENT, EntitySpan
from .errors import ConfigError
from .esg import ESG

NON_GUIDED = "non_guided"
GUIDED = "guided"
SPEER = "speer"
MODES = (NON_GUIDED, GUIDED, SPEER)

INSTRUCTION_NON_GUIDED = "Generate the BRIEF HOSPITAL COURSE summary."
INSTRUCTION_GUIDED = (
    "Generate the BRIEF HOSPITAL COURSE summary using only the medical entities "
    "(PROBLEMS, TREATMENTS, and TESTS) provided."
)
INSTRUCTION_SPEER = (
    "Retrieve a subset of the medical entities in double brackets {{ }} and use them "
    "to generate the next sentence of the BRIEF HOSPITAL COURSE summary."
)
GENERATION_CUE = "### BRIEF HOSPITAL COURSE:\n"

_GROUP_HEADERS = ((PROBLEM, "PROBLEMS:"), (TREATMENT, "TREATMENTS:"), (TEST, "TESTS:"))


@dataclass(frozen=True)
class GuidanceEntry:
    esg_id: int
    line: str  # the ESG's unique surfaces joined by "; "


@dataclass(frozen=True)
class GuidanceList:
    problems: tuple[GuidanceEntry, ...]
    treatments: tuple[GuidanceEntry, ...]
    tests: tuple[GuidanceEntry, ...]

    def esg_ids(self) -> set[int]:
        return {e.esg_id for group in (self.problems, self.treatments, self.tests) for e in group}

    def render(self) -> str:
        groups = {PROBLEM: self.problems, TREATMENT: self.treatments, TEST: self.tests}
        lines = []
        for semantic_type, header in _GROUP_HEADERS:
            lines.append(header)
            lines.extend(entry.line for entry in groups[semantic_type])
        return "\n".join(lines)


def build_guidance(salient_esgs: Sequence[ESG], seed: int | None = None) -> GuidanceList:
    """Group salient ESGs by semantic type. With a seed the order is shuffled
    deterministically (training mode); without one, input order is kept."""
    esgs = list(salient_esgs)
    if seed is not None:
        random.Random(seed).shuffle(esgs)
    groups: dict[str, list[GuidanceEntry]] = {PROBLEM: [], TREATMENT: [], TEST: []}
    for esg in esgs:
        groups[esg.semantic_type].append(GuidanceEntry(esg.esg_id, "; ".join(esg.surfaces)))
    return GuidanceList(
        problems=tuple(groups[PROBLEM]),
        treatments=tuple(groups[TREATMENT]),
        tests=tuple(groups[TEST]),
    )


@dataclass(frozen=True)
class TaggedSpan:
    start: int
    end: int  # [start, end) covers "{{surface}}" in the tagged text
    esg_id: int


@dataclass(frozen=True)
class TaggedSource:
    text: str
    tagged_spans: tuple[TaggedSpan, ...]


def escape_braces(text: str) -> str:
    """Insert a space between adjacent braces so the source itself can never
    contain a "{{" or "}}" token; tag stripping then only removes real tags."""
    return re.sub(r"\}(?=\})", "} ", re.sub(r"\{(?=\{)", "{ ", text))


def strip_tags(text: str) -> str:
    return text.replace("{{", "").replace("}}", "")


def embed_tags(text: str, tagged_entities: Sequence[tuple[EntitySpan, int]]) -> TaggedSource:
    """Wrap each span as {{surface}}, remapping offsets into the tagged text.

    Spans must be sorted, non-overlapping, in-bounds slices of `text`, and
    must not themselves contain brace characters (escaping makes stripping
    unambiguous only under that restriction).
    """
    insertions = [i for i in range(len(text) - 1) if text[i] == text[i + 1] and text[i] in "{}"]

    def remap(offset: int) -> int:
        return offset + sum(1 for i in insertions if i < offset)

    escaped = escape_braces(text)
    pieces: list[str] = []
    spans: list[TaggedSpan] = []
    previous_end = 0
    consumed = 0  # position in the escaped text
    for span, esg_id in tagged_entities:
        if span.start < previous_end:
            raise ValueError(f"span [{span.start}, {span.end}) {span.surface!r} overlaps or is unsorted")
        if span.end > len(text):
            raise ValueError(f"span [{span.start}, {span.end}) {span.surface!r} out of bounds")
        if text[span.start : span.end] != span.surface:
            raise ValueError(f"span [{span.start}, {span.end}) does not slice to {span.surface!r}")
        if "{" in span.surface or "}" in span.surface:
            raise ValueError(f"span surface {span.surface!r} contains brace characters")
        previous_end = span.end
        esc_start, esc_end = remap(span.start), remap(span.end)
        pieces.append(escaped[consumed:esc_start])
        tag_start = sum(len(p) for p in pieces)
        pieces.append("{{" + escaped[esc_start:esc_end] + "}}")
        spans.append(TaggedSpan(start=tag_start, end=tag_start + (esc_end - esc_start) + 4, esg_id=esg_id))
        consumed = esc_end
    pieces.append(escaped[consumed:])
    return TaggedSource(text="".join(pieces), tagged_spans=tuple(spans))


def salient_span_pairs(
    spans: Sequence[EntitySpan], esgs: Sequence[ESG], salient_ids: set[int]
) -> list[tuple[EntitySpan, int]]:
    """Pair each span whose surface belongs to a salient ESG with that ESG's id."""
    surface_to_esg = {
        surface: esg.esg_id for esg in esgs if esg.esg_id in salient_ids for surface in esg.surfaces
    }
    return [(span, surface_to_esg[span.surface]) for span in spans if span.surface in surface_to_esg]


@dataclass(frozen=True)
class ChatTemplate:
    """Role-marker strings for one model family; all default to empty."""

    system_prefix: str = ""
    user_prefix: str = ""
    user_suffix: str = ""
    assistant_prefix: str = ""

    @classmethod
    def from_file(cls, path: str | Path) -> "ChatTemplate":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {"system_prefix", "user_prefix", "user_suffix", "assistant_prefix"}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"template file {path}: unknown keys {sorted(unknown)}")
        return cls(**{k: str(v) for k, v in payload.items()})


def build_input(
    mode: str,
    source_text: str | None = None,
    guidance: GuidanceList | None = None,
    tagged: TaggedSource | None = None,
    template: ChatTemplate | None = None,
) -> str:
    """Assemble instruction + source (+ guidance) + generation cue for a mode.

    The guided mode appends the rendered guidance after the source notes; the
    embedded mode uses the tagged source text in place of the plain one.
    """
    template = template or ChatTemplate()
    if mode == NON_GUIDED:
        instruction, source = INSTRUCTION_NON_GUIDED, source_text
    elif mode == GUIDED:
        if guidance is None:
            raise ValueError("guided mode requires a guidance list")
        instruction, source = INSTRUCTION_GUIDED, source_text
    elif mode == SPEER:
        if tagged is None:
            raise ValueError("embedded-retrieval mode requires a tagged source")
        instruction, source = INSTRUCTION_SPEER, tagged.text
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if source is None:
        raise ValueError(f"mode {mode!r} requires source text")

    content = instruction + "\n\n" + source
    if mode == GUIDED:
        content += "\n\n" + guidance.render()
    return (
        template.system_prefix
        + template.user_prefix
        + content
        + "\n\n"
        + template.user_suffix
        + template.assistant_prefix
        + GENERATION_CUE
    )
