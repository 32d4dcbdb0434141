"""Deterministic synthetic admissions for tests, demos, and the bundled corpus.

Each generated admission mentions a handful of medical concepts; every concept
owns a small set of synonym surfaces plus a one-hot embedding, so the synonym
graph groups surfaces of one concept together (cosine 1.0) and keeps distinct
concepts apart (cosine 0.0). References mention only concepts that appear in
the source, which makes the corpus fully self-consistent: a generator that
copies source sentences can cover every salient concept without hallucinating.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Admission, Note, save_admissions
from .entity import PROBLEM, TEST, TREATMENT

EMBEDDING_DIM = 64

# (semantic_type, synonym surfaces). Surfaces of different concepts never
# contain one another, so gazetteer longest-match cannot cross concepts.
CONCEPTS: tuple[tuple[str, tuple[str, ...]], ...] = (
    (PROBLEM, ("chest pain",)),
    (PROBLEM, ("pneumonia", "lung infection")),
    (PROBLEM, ("CHF", "congestive heart failure")),
    (PROBLEM, ("sepsis",)),
    (PROBLEM, ("hypertension", "elevated blood pressure")),
    (PROBLEM, ("DM2", "diabetes mellitus")),
    (PROBLEM, ("anemia",)),
    (PROBLEM, ("UTI", "urinary tract infection")),
    (PROBLEM, ("hypokalemia",)),
    (PROBLEM, ("afib", "atrial fibrillation")),
    (PROBLEM, ("leukocytosis",)),
    (PROBLEM, ("acute kidney injury", "AKI")),
    (TEST, ("WBC", "WBC count", "white blood cell count")),
    (TEST, ("troponin",)),
    (TEST, ("chest x-ray", "CXR")),
    (TEST, ("CT of the abdomen", "abdominal CT")),
    (TEST, ("blood culture",)),
    (TEST, ("creatinine",)),
    (TEST, ("hemoglobin", "hgb")),
    (TEST, ("echocardiogram", "echo study")),
    (TREATMENT, ("IV antibiotics", "intravenous antibiotics")),
    (TREATMENT, ("furosemide", "Lasix")),
    (TREATMENT, ("insulin",)),
    (TREATMENT, ("appendectomy",)),
    (TREATMENT, ("metoprolol",)),
    (TREATMENT, ("heparin drip",)),
    (TREATMENT, ("albuterol",)),
    (TREATMENT, ("dialysis",)),
)

NOTE_TITLES = (
    "ED Triage",
    "Admission H&P",
    "Progress Report",
    "Nursing Flowsheet",
    "Consult Response",
    "Discharge Planning",
)

SECTION_HEADERS = (
    "CHIEF COMPLAINT:",
    "HPI:",
    "HOSPITAL COURSE:",
    "LABS:",
    "MEDICATIONS:",
    "ASSESSMENT AND PLAN:",
    "IMAGING:",
)

# Mention templates keep the surface verbatim and start with an uppercase word
# so the sentence splitter sees clean boundaries.
MENTION_TEMPLATES = (
    "Patient reports {s} since yesterday.",
    "Overnight the team monitored {s} closely.",
    "Serial checks of {s} were continued.",
    "Findings were consistent with {s} on review.",
    "Management of {s} continued per protocol.",
    "Morning rounds discussed {s} at length.",
)

REFERENCE_TEMPLATES = (
    "The course included management of {s} throughout the stay.",
    "Serial evaluation of {s} guided therapy.",
    "Treatment decisions centered on {s} during admission.",
)

FILLER_WORDS = (
    "routine", "observation", "continued", "without", "incident", "overnight",
    "stable", "tolerating", "oral", "intake", "ambulating", "independently",
    "per", "protocol", "unchanged", "reviewed", "family", "updated", "plan",
    "discussed", "morning", "bedside", "team", "services", "coordination",
)


@dataclass(frozen=True)
class SyntheticCorpus:
    admissions: list[Admission]
    gazetteer: dict[str, str]  # lowercased surface -> semantic type
    embeddings: dict[str, np.ndarray]  # lowercased surface -> unit vector
    salient_concepts: dict[str, set[int]]  # admission_id -> concept indices


def build_gazetteer() -> dict[str, str]:
    return {
        surface.lower(): semantic_type
        for semantic_type, surfaces in CONCEPTS
        for surface in surfaces
    }


def build_embeddings() -> dict[str, np.ndarray]:
    if len(CONCEPTS) > EMBEDDING_DIM:
        raise ValueError("too many concepts for one-hot embeddings")
    vectors: dict[str, np.ndarray] = {}
    for index, (_, surfaces) in enumerate(CONCEPTS):
        vector = np.zeros(EMBEDDING_DIM)
        vector[index] = 1.0
        vector.setflags(write=False)
        for surface in surfaces:
            vectors[surface.lower()] = vector
    return vectors


def _filler_sentence(rng: random.Random) -> str:
    words = rng.sample(FILLER_WORDS, rng.randint(5, 9))
    return words[0].capitalize() + " " + " ".join(words[1:]) + "."


def _mention_sentence(rng: random.Random, surface: str) -> str:
    return rng.choice(MENTION_TEMPLATES).format(s=surface)


def generate_admission(
    rng: random.Random,
    admission_id: str,
    salience_rule: str = "random",
    long_stay: bool = False,
) -> tuple[Admission, set[int]]:
    """Build one admission; returns it with the indices of salient concepts."""
    concept_ids = rng.sample(range(len(CONCEPTS)), rng.randint(6, 10))
    mention_counts = {cid: rng.randint(1, 5) for cid in concept_ids}
    if salience_rule == "count3":
        salient = {cid for cid, count in mention_counts.items() if count >= 3}
        if not salient:  # keep the oracle metrics well-defined
            boosted = rng.choice(concept_ids)
            mention_counts[boosted] = 3
            salient = {boosted}
    elif salience_rule == "random":
        k = max(1, round(len(concept_ids) * 0.4))
        salient = set(rng.sample(concept_ids, k))
    else:
        raise ValueError(f"unknown salience rule {salience_rule!r}")

    pending: list[str] = []
    for cid, count in mention_counts.items():
        pending.extend(rng.choice(CONCEPTS[cid][1]) for _ in range(count))
    rng.shuffle(pending)

    note_count = rng.randint(2, 4)
    base_date = dt.date(2021, 3, 1) + dt.timedelta(days=rng.randint(0, 200))
    offsets = sorted(rng.randint(0, 4) for _ in range(note_count))
    per_note = [pending[i::note_count] for i in range(note_count)]

    notes = []
    for i in range(note_count):
        headers = rng.sample(SECTION_HEADERS, rng.randint(2, 3))
        chunks = [per_note[i][j :: len(headers)] for j in range(len(headers))]
        sections = []
        for header, surfaces in zip(headers, chunks):
            sentences = [_filler_sentence(rng)]
            sentences += [_mention_sentence(rng, s) for s in surfaces]
            sentences.append(_filler_sentence(rng))
            sections.append(header + "\n" + " ".join(sentences))
        body = "\n".join(sections) + "\n"
        if long_stay and i == 0:
            for part in range(1, 13):
                narrative = " ".join(_filler_sentence(rng) for _ in range(100))
                body += f"OPERATIVE NARRATIVE PART {part}:\n" + narrative + "\n"
        notes.append(
            Note(
                note_id=f"{admission_id}-n{i + 1}",
                title=rng.choice(NOTE_TITLES),
                date=base_date + dt.timedelta(days=offsets[i]),
                body=body,
            )
        )

    reference_sentences = []
    for cid in sorted(salient):
        surface = (
            rng.choice(CONCEPTS[cid][1])
            if rng.random() < 0.3
            else CONCEPTS[cid][1][0]
        )
        reference_sentences.append(rng.choice(REFERENCE_TEMPLATES).format(s=surface))
    admission = Admission(
        admission_id=admission_id,
        notes=tuple(notes),
        reference_summary=" ".join(reference_sentences),
    )
    return admission, salient


def generate_corpus(
    n_admissions: int = 12,
    seed: int = 7,
    salience_rule: str = "random",
    long_stays: int = 3,
) -> SyntheticCorpus:
    rng = random.Random(seed)
    admissions = []
    salient_concepts = {}
    for i in range(n_admissions):
        admission_id = f"adm-{i + 1:03d}"
        admission, salient = generate_admission(
            rng, admission_id, salience_rule=salience_rule, long_stay=i < long_stays
        )
        admissions.append(admission)
        salient_concepts[admission_id] = salient
    return SyntheticCorpus(
        admissions=admissions,
        gazetteer=build_gazetteer(),
        embeddings=build_embeddings(),
        salient_concepts=salient_concepts,
    )


def write_corpus_files(corpus: SyntheticCorpus, directory: str | Path) -> dict[str, Path]:
    """Write admissions JSONL, gazetteer TSV, and embeddings JSONL."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": directory / "synthetic_admissions.jsonl",
        "gazetteer": directory / "synthetic_gazetteer.tsv",
        "embeddings": directory / "synthetic_embeddings.jsonl",
    }
    save_admissions(corpus.admissions, paths["corpus"])
    gazetteer_lines = ["# surface<TAB>semantic_type"]
    gazetteer_lines += [f"{s}\t{t}" for s, t in sorted(corpus.gazetteer.items())]
    paths["gazetteer"].write_text("\n".join(gazetteer_lines) + "\n", encoding="utf-8")
    with open(paths["embeddings"], "w", encoding="utf-8") as fh:
        for surface in sorted(corpus.embeddings):
            vector = [float(x) for x in corpus.embeddings[surface]]
            fh.write(json.dumps({"surface": surface, "vector": vector}) + "\n")
    return paths


def bundled_data_dir() -> Path:
    """Directory holding the pre-generated corpus shipped with the package."""
    return Path(__file__).resolve().parent / "data"
