"""Admission records: loading, chronological note assembly, and token counting.

An admission is one hospital stay: a date-ordered sequence of clinical notes
plus (optionally) the clinician-written reference summary. Notes are rendered
with a fixed header block and concatenated chronologically to form the model
input. Token budgets are enforced against a pluggable tokenizer; the default
counts maximal non-whitespace runs.
"""

from __future__ import annotations

import datetime as dt
import json
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

from .errors import DataFormatError

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


@dataclass(frozen=True)
class Note:
    note_id: str
    title: str
    date: dt.date
    body: str


@dataclass(frozen=True)
class Admission:
    admission_id: str
    notes: tuple[Note, ...]
    reference_summary: str | None = None


class Tokenizer(ABC):
    """Maps text to a token sequence; count() is len(tokenize())."""

    @abstractmethod
    def tokenize(self, text: str) -> list[str]:
        raise NotImplementedError

    def count(self, text: str) -> int:
        return len(self.tokenize(text))


class WhitespaceTokenizer(Tokenizer):
    """One token per maximal non-whitespace run."""

    def tokenize(self, text: str) -> list[str]:
        return text.split()


class VocabTokenizer(Tokenizer):
    """Greedy longest-prefix segmentation of whitespace words against a fixed
    vocabulary. Characters not covered by any vocabulary entry become
    single-character tokens, so every text tokenizes.
    """

    def __init__(self, vocab: set[str]):
        if not vocab or any(not v for v in vocab):
            raise ValueError("vocabulary must be a non-empty set of non-empty strings")
        self.vocab = frozenset(vocab)
        self._max_len = max(len(v) for v in vocab)

    @classmethod
    def from_file(cls, path: str | Path) -> "VocabTokenizer":
        entries = set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            token = line.strip()
            if token and not token.startswith("#"):
                entries.add(token)
        return cls(entries)

    def tokenize(self, text: str) -> list[str]:
        tokens: list[str] = []
        for word in text.split():
            i = 0
            while i < len(word):
                for j in range(min(len(word), i + self._max_len), i, -1):
                    if word[i:j] in self.vocab:
                        tokens.append(word[i:j])
                        i = j
                        break
                else:
                    tokens.append(word[i])
                    i += 1
        return tokens


_DEFAULT_TOKENIZER = WhitespaceTokenizer()


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    return (tokenizer or _DEFAULT_TOKENIZER).count(text)


def _parse_note(line_no: int, index: int, raw: object) -> Note:
    where = f"line {line_no}: note {index}"
    if not isinstance(raw, dict):
        raise DataFormatError(f"{where}: expected an object")
    for field in ("note_id", "title", "date", "body"):
        if field not in raw:
            raise DataFormatError(f"{where}: missing field {field}")
        if not isinstance(raw[field], str):
            raise DataFormatError(f"{where}: field {field} must be a string")
    if not _DATE_RE.match(raw["date"]):
        raise DataFormatError(f"{where}: invalid date {raw['date']!r} (expected YYYY-MM-DD)")
    try:
        date = dt.date.fromisoformat(raw["date"])
    except ValueError as exc:
        raise DataFormatError(f"{where}: invalid date {raw['date']!r}") from exc
    if not raw["body"].strip():
        raise DataFormatError(f"{where}: empty body")
    return Note(note_id=raw["note_id"], title=raw["title"], date=date, body=raw["body"])


def _parse_admission(line_no: int, raw: object) -> Admission:
    if not isinstance(raw, dict):
        raise DataFormatError(f"line {line_no}: expected an object")
    for field in ("admission_id", "notes"):
        if field not in raw:
            raise DataFormatError(f"line {line_no}: missing field {field}")
    if not isinstance(raw["admission_id"], str) or not raw["admission_id"]:
        raise DataFormatError(f"line {line_no}: field admission_id must be a non-empty string")
    if not isinstance(raw["notes"], list):
        raise DataFormatError(f"line {line_no}: field notes must be a list")
    if not raw["notes"]:
        raise DataFormatError(f"line {line_no}: empty notes")
    reference = raw.get("reference_summary")
    if reference is not None and not isinstance(reference, str):
        raise DataFormatError(f"line {line_no}: field reference_summary must be a string or null")
    notes = [_parse_note(line_no, i, n) for i, n in enumerate(raw["notes"], start=1)]
    seen_ids = set()
    for note in notes:
        if note.note_id in seen_ids:
            raise DataFormatError(f"line {line_no}: duplicate note_id {note.note_id!r}")
        seen_ids.add(note.note_id)
    ordered = tuple(sorted(notes, key=lambda n: n.date))  # stable on date ties
    return Admission(admission_id=raw["admission_id"], notes=ordered, reference_summary=reference)


def load_admissions(path: str | Path) -> list[Admission]:
    """Read one admission per JSONL line; notes come back date-sorted."""
    admissions: list[Admission] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                raise DataFormatError(f"line {line_no}: empty line")
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            admission = _parse_admission(line_no, raw)
            if admission.admission_id in seen:
                raise DataFormatError(
                    f"line {line_no}: duplicate admission_id {admission.admission_id!r}"
                )
            seen.add(admission.admission_id)
            admissions.append(admission)
    return admissions


def admission_to_dict(admission: Admission) -> dict:
    return {
        "admission_id": admission.admission_id,
        "notes": [
            {
                "note_id": n.note_id,
                "title": n.title,
                "date": n.date.isoformat(),
                "body": n.body,
            }
            for n in admission.notes
        ],
        "reference_summary": admission.reference_summary,
    }


def save_admissions(admissions: list[Admission], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for admission in admissions:
            fh.write(json.dumps(admission_to_dict(admission)) + "\n")


def day_indices(admission: Admission) -> list[tuple[int, int]]:
    """(day_index, total_days) per note: whole days since the first note, 1-based."""
    first = admission.notes[0].date
    total = (admission.notes[-1].date - first).days + 1
    return [((n.date - first).days + 1, total) for n in admission.notes]


def render_note_header(note: Note, day_index: int, total_days: int) -> str:
    if not 1 <= day_index <= total_days:
        raise ValueError(f"day_index {day_index} out of range 1..{total_days}")
    position = f"Day {day_index} of {total_days}"
    if day_index == 1:
        position += " (On Admission)"
    if day_index == total_days:
        position += " (On Discharge)"
    return f"=== NOTE: {note.title} ===\nDATE: {note.date.isoformat()}\n{position}"


def concatenate_notes(admission: Admission) -> str:
    """Headers and bodies interleaved chronologically, one blank line between notes."""
    blocks = []
    for note, (day, total) in zip(admission.notes, day_indices(admission)):
        blocks.append(render_note_header(note, day, total) + "\n\n" + note.body)
    return "\n\n".join(blocks)


def concatenate_with_bodies(admission: Admission, bodies: dict[str, str]) -> str:
    """Like concatenate_notes but with replacement bodies (e.g. post-filter).

    Notes absent from `bodies` are omitted; day indices stay anchored to the
    full admission so headers do not shift when notes drop out.
    """
    blocks = []
    for note, (day, total) in zip(admission.notes, day_indices(admission)):
        if note.note_id not in bodies:
            continue
        blocks.append(render_note_header(note, day, total) + "\n\n" + bodies[note.note_id])
    return "\n\n".join(blocks)


def body_offsets(admission: Admission) -> dict[str, int]:
    """Start offset of each note body within concatenate_notes(admission)."""
    offsets: dict[str, int] = {}
    pos = 0
    for i, (note, (day, total)) in enumerate(zip(admission.notes, day_indices(admission))):
        if i > 0:
            pos += 2  # "\n\n" separator between blocks
        pos += len(render_note_header(note, day, total)) + 2
        offsets[note.note_id] = pos
        pos += len(note.body)
    return offsets
