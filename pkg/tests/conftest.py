from __future__ import annotations

import datetime as dt
import random

import pytest

from speer.corpus import Admission, Note
from speer.entity import PROBLEM, TEST, TREATMENT, LexiconExtractor, PrecomputedProvider
from speer.synthetic import bundled_data_dir, generate_corpus


@pytest.fixture(scope="session")
def bundled_paths():
    data = bundled_data_dir()
    return {
        "corpus": data / "synthetic_admissions.jsonl",
        "gazetteer": data / "synthetic_gazetteer.tsv",
        "embeddings": data / "synthetic_embeddings.jsonl",
    }


@pytest.fixture(scope="session")
def small_corpus():
    """A short generated corpus with its extractor and concept-aware provider."""
    corpus = generate_corpus(n_admissions=6, seed=11, long_stays=0)
    return {
        "corpus": corpus,
        "extractor": LexiconExtractor(corpus.gazetteer),
        "provider": PrecomputedProvider(corpus.embeddings),
    }


def make_note(note_id="n1", title="Progress Report", date="2021-03-01", body="Stable overnight.\n"):
    return Note(note_id=note_id, title=title, date=dt.date.fromisoformat(date), body=body)


def make_admission(admission_id="a1", notes=None, reference="Patient improved."):
    notes = notes or (make_note(),)
    return Admission(admission_id=admission_id, notes=tuple(notes), reference_summary=reference)


def random_gazetteer(rng: random.Random, n_keys: int) -> dict[str, str]:
    """Small-alphabet gazetteer so random texts actually contain matches."""
    words = ["aa", "ab", "ba", "bb", "ca", "cab", "abc"]
    keys: set[str] = set()
    while len(keys) < n_keys:
        keys.add(" ".join(rng.sample(words, rng.randint(1, 2))))
    types = [PROBLEM, TEST, TREATMENT]
    return {k: rng.choice(types) for k in sorted(keys)}


def random_text(rng: random.Random, n_words: int) -> str:
    words = ["aa", "ab", "ba", "bb", "ca", "cab", "abc", "x", "zz", "aab"]
    out = []
    for _ in range(n_words):
        out.append(rng.choice(words))
        if rng.random() < 0.15:
            out[-1] += rng.choice([",", "."])
    return " ".join(out)
