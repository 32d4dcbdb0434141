"""Coarse section filtering to fit a token budget.

Notes are segmented losslessly into header/body sections, each section is
scored (ROUGE overlap with the reference, or a header-list heuristic when no
reference exists), and the lowest-scoring sections are removed until the
surviving text fits the budget. Original order is always preserved.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Note, Tokenizer, count_tokens

TOKEN_BUDGET = 8192


@dataclass(frozen=True)
class Section:
    note_id: str
    ordinal: int
    header: str  # header line without its line ending; "" for leading headerless text
    body: str  # raw text after the header, line endings preserved

    @property
    def text(self) -> str:
        return self.header + self.body


def _is_header_line(line: str) -> bool:
    stripped = line.strip()
    words = stripped.split()
    if not 1 <= len(words) <= 6:
        return False
    if stripped.endswith(":"):
        return True
    letters = [c for c in stripped if c.isalpha()]
    if not letters:
        return False
    return sum(1 for c in letters if c.isupper()) / len(letters) >= 0.8


def segment_sections(note: Note) -> list[Section]:
    """Split a note body at header-looking lines (mostly-uppercase or
    colon-terminated, at most six words). Concatenating the sections' header
    and body fields in order reproduces the body byte-for-byte."""
    sections: list[Section] = []
    header = ""
    body_parts: list[str] = []

    def close() -> None:
        nonlocal header, body_parts
        body = "".join(body_parts)
        if header or body:
            sections.append(Section(note.note_id, len(sections), header, body))
        header, body_parts = "", []

    for line in note.body.splitlines(keepends=True):
        content = line.rstrip("\r\n")
        if _is_header_line(content):
            close()
            header = content
            body_parts = [line[len(content):]]
        else:
            body_parts.append(line)
    close()
    return sections


def _ngrams(text: str, n: int) -> Counter:
    tokens = text.lower().split()
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_f1(candidate: str, reference: str, n: int) -> float:
    """F1 over clipped n-gram multiset overlap (lowercased, whitespace tokens).

    Returns 0.0 when either side has no n-grams.
    """
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    candidate_grams = _ngrams(candidate, n)
    reference_grams = _ngrams(reference, n)
    candidate_total = sum(candidate_grams.values())
    reference_total = sum(reference_grams.values())
    if candidate_total == 0 or reference_total == 0:
        return 0.0
    overlap = sum(min(count, reference_grams[gram]) for gram, count in candidate_grams.items())
    if overlap == 0:
        return 0.0
    precision = overlap / candidate_total
    recall = overlap / reference_total
    return 2.0 * precision * recall / (precision + recall)


class SectionScorer(ABC):
    @abstractmethod
    def score(self, section: Section, reference: str | None) -> float:
        raise NotImplementedError


class OracleScorer(SectionScorer):
    """Mean of ROUGE-1 and ROUGE-2 F1 between the section text and the reference."""

    def score(self, section: Section, reference: str | None) -> float:
        return score_section_oracle(section, reference if reference is not None else "")


class HeuristicScorer(SectionScorer):
    """Reference-free scorer driven by header allow/deny lists."""

    def __init__(self, keep: set[str] | None = None, drop: set[str] | None = None,
                 default: float = 0.5):
        self.keep = {self._normalize(h) for h in (keep or set())}
        self.drop = {self._normalize(h) for h in (drop or set())}
        self.default = default

    @staticmethod
    def _normalize(header: str) -> str:
        return header.strip().rstrip(":").strip().lower()

    @classmethod
    def from_files(cls, keep_path: str | Path | None, drop_path: str | Path | None) -> "HeuristicScorer":
        def read(path):
            if path is None:
                return set()
            return {
                line.strip()
                for line in Path(path).read_text(encoding="utf-8").splitlines()
                if line.strip() and not line.strip().startswith("#")
            }

        return cls(keep=read(keep_path), drop=read(drop_path))

    def score(self, section: Section, reference: str | None) -> float:
        key = self._normalize(section.header)
        if key and key in self.keep:
            return 1.0
        if key and key in self.drop:
            return 0.0
        return self.default


def score_section_oracle(section: Section, reference: str) -> float:
    if not reference.strip():
        raise ValueError("oracle section scoring requires a non-empty reference")
    return (rouge_f1(section.text, reference, 1) + rouge_f1(section.text, reference, 2)) / 2.0


@dataclass(frozen=True)
class FilterResult:
    sections: tuple[Section, ...]
    scores: tuple[float, ...]
    dropped: tuple[Section, ...]
    dropped_scores: tuple[float, ...]
    total_tokens: int
    truncated: bool


def filter_to_budget(
    sections: Sequence[Section],
    scores: Sequence[float],
    budget: int = TOKEN_BUDGET,
    tokenizer: Tokenizer | None = None,
) -> FilterResult:
    """Remove sections in ascending score order (score ties drop the later
    section first) until the summed token count of the survivors fits the
    budget. Survivors keep their original order. If even the single
    best-scoring section exceeds the budget, it is returned alone with the
    truncated flag set.
    """
    if len(sections) != len(scores):
        raise ValueError("scores must align one-to-one with sections")
    if budget < 1:
        raise ValueError("budget must be >= 1")

    token_counts = [count_tokens(section.text, tokenizer) for section in sections]
    total = sum(token_counts)
    surviving = set(range(len(sections)))
    removal_order = sorted(range(len(sections)), key=lambda i: (scores[i], -i))
    for index in removal_order:
        if total <= budget or len(surviving) <= 1:
            break
        surviving.discard(index)
        total -= token_counts[index]

    kept = sorted(surviving)
    dropped = [i for i in range(len(sections)) if i not in surviving]
    return FilterResult(
        sections=tuple(sections[i] for i in kept),
        scores=tuple(scores[i] for i in kept),
        dropped=tuple(sections[i] for i in dropped),
        dropped_scores=tuple(scores[i] for i in dropped),
        total_tokens=total,
        truncated=total > budget,
    )
