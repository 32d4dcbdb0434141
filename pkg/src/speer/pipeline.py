"""Stage orchestration: configuration, artifact files, and the stage functions
behind each CLI subcommand.

Every stage reads and writes plain JSONL/CSV artifacts in the configured
output directory, so each step of the pipeline can be audited or replaced.
All stages are deterministic: fixed config and inputs produce byte-identical
artifacts regardless of worker count, because per-admission work is pure and
results are written in input order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence
from zlib import crc32

import numpy as np

from . import filter as filtering
from . import metrics as metrics_mod
from . import r3, select
from .corpus import (
    Admission,
    Tokenizer,
    VocabTokenizer,
    WhitespaceTokenizer,
    body_offsets,
    concatenate_notes,
    concatenate_with_bodies,
    count_tokens,
    load_admissions,
    save_admissions,
)
from .entity import (
    EmbeddingProvider,
    EntityExtractor,
    EntitySpan,
    HashedNgramProvider,
    LexiconExtractor,
    PrecomputedProvider,
    extract_entities,
    load_gazetteer,
)
from .errors import ConfigError, DataFormatError, SpeerError
from .esg import ESG, build_synonym_graph, form_esgs, label_salience, rank_and_truncate
from .guide import (
    GUIDED,
    MODES,
    NON_GUIDED,
    SPEER,
    ChatTemplate,
    TaggedSource,
    TaggedSpan,
    build_guidance,
    build_input,
    embed_tags,
    salient_span_pairs,
)

REFERENCE_DOC_ID = "reference"

ARTIFACT_FILES = {
    "admissions": "admissions.jsonl",
    "entities": "entities.jsonl",
    "esgs": "esgs.jsonl",
    "esgs_labeled": "esgs_labeled.jsonl",
    "model": "salience_model.json",
    "scores": "scores.jsonl",
    "pr_curve": "pr_curve.csv",
    "filtered": "filtered.jsonl",
    "filter_report": "filter_report.jsonl",
    "tagged": "tagged.jsonl",
    "oracle_targets": "oracle_targets.jsonl",
    "model_outputs": "outputs_speer.jsonl",
    "parsed": "parsed.jsonl",
    "eval_csv": "eval_report.csv",
    "eval_json": "eval_report.json",
}

ARTIFACT_PRODUCERS = {
    "admissions": "ingest",
    "entities": "extract",
    "esgs": "esg",
    "esgs_labeled": "label",
    "model": "train-select",
    "scores": "select",
    "filtered": "filter",
    "tagged": "tag",
    "model_outputs": "mockgen",
    "parsed": "parse",
}


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str | None = None
    gazetteer: str | None = None
    embeddings: str | None = None
    model: str | None = None
    outputs: str = "out"
    synonym_threshold: float = 0.75
    salience_threshold: float = 0.5
    budget: int = 8192
    esg_cap: int = 1024
    seed: int = 0
    tokenizer: str = "whitespace"
    parse_mode: str = "lenient"

    def validate(self) -> None:
        if not 0.0 <= self.synonym_threshold <= 1.0:
            raise ConfigError(f"synonym_threshold {self.synonym_threshold} outside [0, 1]")
        if not 0.0 <= self.salience_threshold <= 1.0:
            raise ConfigError(f"salience_threshold {self.salience_threshold} outside [0, 1]")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.esg_cap < 1:
            raise ConfigError("esg_cap must be >= 1")
        if self.parse_mode not in ("strict", "lenient"):
            raise ConfigError(f"parse_mode must be strict or lenient, got {self.parse_mode!r}")
        if self.tokenizer != "whitespace" and not self.tokenizer.startswith("vocab:"):
            raise ConfigError(f"tokenizer must be 'whitespace' or 'vocab:<path>', got {self.tokenizer!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config file {path}: expected an object")
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"config file {path}: unknown keys {sorted(unknown)}")
        config = cls(**payload)
        config.validate()
        return config

    def with_overrides(self, **overrides) -> "PipelineConfig":
        updates = {k: v for k, v in overrides.items() if v is not None}
        config = replace(self, **updates)
        config.validate()
        return config

    def outputs_dir(self) -> Path:
        return Path(self.outputs)

    def artifact(self, key: str) -> Path:
        if key == "model" and self.model:
            return Path(self.model)
        return self.outputs_dir() / ARTIFACT_FILES[key]


def make_tokenizer(config: PipelineConfig) -> Tokenizer:
    if config.tokenizer == "whitespace":
        return WhitespaceTokenizer()
    return VocabTokenizer.from_file(config.tokenizer.removeprefix("vocab:"))


def make_provider(config: PipelineConfig) -> EmbeddingProvider:
    if config.embeddings:
        return PrecomputedProvider.from_jsonl(config.embeddings)
    return HashedNgramProvider(seed=config.seed)


def make_extractor(config: PipelineConfig) -> EntityExtractor:
    if not config.gazetteer:
        raise ConfigError("this stage needs a gazetteer; set `gazetteer` in the config")
    return LexiconExtractor(load_gazetteer(config.gazetteer))


def require_artifact(config: PipelineConfig, key: str) -> Path:
    path = config.artifact(key)
    if not path.exists():
        producer = ARTIFACT_PRODUCERS.get(key, "?")
        raise DataFormatError(f"expected {key} file {path}; run `{producer}` first")
    return path


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {line_no}: invalid JSON ({exc.msg})") from exc
    return rows


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _stage_error(stage: str, admission_id: str, exc: Exception) -> SpeerError:
    kind = type(exc) if isinstance(exc, SpeerError) else DataFormatError
    return kind(f"stage '{stage}': admission '{admission_id}': {exc}")


# ---------------------------------------------------------------------------
# artifact (de)serialization helpers

def _span_to_dict(span: EntitySpan) -> dict:
    return {"start": span.start, "end": span.end, "surface": span.surface, "type": span.semantic_type}


def _span_from_dict(doc_id: str, raw: dict) -> EntitySpan:
    return EntitySpan(doc_id, raw["start"], raw["end"], raw["surface"], raw["type"])


def _esg_to_dict(esg: ESG, salient: bool | None) -> dict:
    return {
        "esg_id": esg.esg_id,
        "surfaces": list(esg.surfaces),
        "type": esg.semantic_type,
        "mention_count": esg.mention_count,
        "freq_rank": esg.freq_rank,
        "salient": salient,
    }


def load_admission_artifact(config: PipelineConfig) -> list[Admission]:
    return load_admissions(require_artifact(config, "admissions"))


def load_spans_by_admission(config: PipelineConfig) -> dict[str, list[EntitySpan]]:
    """Entity spans grouped per admission, in note order."""
    grouped: dict[str, list[EntitySpan]] = {}
    for row in _read_jsonl(require_artifact(config, "entities")):
        spans = [_span_from_dict(row["doc_id"], s) for s in row["spans"]]
        grouped.setdefault(row["admission_id"], []).extend(spans)
    return grouped


def load_esg_rows(config: PipelineConfig, labeled: bool) -> dict[str, list[dict]]:
    key = "esgs_labeled" if labeled else "esgs"
    return {row["admission_id"]: row["esgs"] for row in _read_jsonl(require_artifact(config, key))}


def rebuild_esgs(
    esg_rows: Sequence[dict], spans: Sequence[EntitySpan], admission_id: str
) -> list[ESG]:
    """Reassemble full ESG objects from the esgs artifact plus the entities
    artifact (mentions are not serialized; surfaces identify them uniquely)."""
    surface_to_esg: dict[str, int] = {}
    for row in esg_rows:
        for surface in row["surfaces"]:
            surface_to_esg[surface] = row["esg_id"]
    mentions: dict[int, list[EntitySpan]] = {row["esg_id"]: [] for row in esg_rows}
    for span in spans:
        esg_id = surface_to_esg.get(span.surface)
        if esg_id is not None:
            mentions[esg_id].append(span)
    esgs = []
    for row in esg_rows:
        if len(mentions[row["esg_id"]]) != row["mention_count"]:
            raise DataFormatError(
                f"admission '{admission_id}': esgs file inconsistent with entities file; "
                "re-run `esg`"
            )
        esgs.append(
            ESG(
                esg_id=row["esg_id"],
                surfaces=tuple(row["surfaces"]),
                mentions=tuple(mentions[row["esg_id"]]),
                semantic_type=row["type"],
                mention_count=row["mention_count"],
                freq_rank=row["freq_rank"],
            )
        )
    return esgs


def salient_ids_oracle(esg_rows: Sequence[dict]) -> set[int]:
    return {row["esg_id"] for row in esg_rows if row.get("salient")}


def salient_ids_predicted(score_rows: Sequence[dict], threshold: float) -> set[int]:
    return {entry["esg_id"] for entry in score_rows if entry["score"] >= threshold}


def load_salient_ids(config: PipelineConfig, source: str) -> dict[str, set[int]]:
    """Per-admission salient ESG ids, from oracle labels or model scores."""
    if source == "oracle":
        return {
            admission_id: salient_ids_oracle(rows)
            for admission_id, rows in load_esg_rows(config, labeled=True).items()
        }
    if source == "predicted":
        score_rows = _read_jsonl(require_artifact(config, "scores"))
        return {
            row["admission_id"]: salient_ids_predicted(row["scores"], config.salience_threshold)
            for row in score_rows
        }
    raise ConfigError(f"salience source must be 'oracle' or 'predicted', got {source!r}")


def load_source_text(config: PipelineConfig, admissions: Sequence[Admission]) -> dict[str, str]:
    """Post-filter concatenated text when the filter stage has run, otherwise
    the full chronological concatenation."""
    filtered_path = config.artifact("filtered")
    if filtered_path.exists():
        return {row["admission_id"]: row["text"] for row in _read_jsonl(filtered_path)}
    return {a.admission_id: concatenate_notes(a) for a in admissions}


# ---------------------------------------------------------------------------
# stages

def stage_ingest(config: PipelineConfig, jobs: int = 1) -> Path:
    if not config.corpus:
        raise ConfigError("ingest needs a corpus path; set `corpus` in the config")
    admissions = load_admissions(config.corpus)
    out = config.artifact("admissions")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_admissions(admissions, out)
    return out


def stage_extract(config: PipelineConfig, jobs: int = 1) -> Path:
    admissions = load_admission_artifact(config)
    extractor = make_extractor(config)

    def run(admission: Admission) -> list[dict]:
        try:
            return [
                {
                    "admission_id": admission.admission_id,
                    "doc_id": note.note_id,
                    "spans": [
                        _span_to_dict(s)
                        for s in extract_entities(note.note_id, note.body, extractor)
                    ],
                }
                for note in admission.notes
            ]
        except Exception as exc:
            raise _stage_error("extract", admission.admission_id, exc) from exc

    rows = [row for group in _pmap(run, admissions, jobs) for row in group]
    out = config.artifact("entities")
    _write_jsonl(out, rows)
    return out


def stage_esg(config: PipelineConfig, jobs: int = 1) -> Path:
    admissions = load_admission_artifact(config)
    spans_by_admission = load_spans_by_admission(config)
    provider = make_provider(config)

    def run(admission: Admission) -> dict:
        spans = spans_by_admission.get(admission.admission_id, [])
        try:
            if spans:
                graph = build_synonym_graph(spans, provider, config.synonym_threshold)
                esgs = rank_and_truncate(form_esgs(graph, spans), config.esg_cap)
            else:
                esgs = []
            return {
                "admission_id": admission.admission_id,
                "esgs": [_esg_to_dict(e, None) for e in esgs],
            }
        except Exception as exc:
            raise _stage_error("esg", admission.admission_id, exc) from exc

    out = config.artifact("esgs")
    _write_jsonl(out, _pmap(run, admissions, jobs))
    return out


def stage_label(config: PipelineConfig, jobs: int = 1) -> Path:
    admissions = load_admission_artifact(config)
    esg_rows = load_esg_rows(config, labeled=False)
    spans_by_admission = load_spans_by_admission(config)
    extractor = make_extractor(config)
    provider = make_provider(config)

    def run(admission: Admission) -> dict:
        rows = esg_rows.get(admission.admission_id, [])
        try:
            if admission.reference_summary is None:
                raise DataFormatError("oracle labeling requires a reference")
            esgs = rebuild_esgs(rows, spans_by_admission.get(admission.admission_id, []),
                                admission.admission_id)
            reference_spans = extract_entities(
                REFERENCE_DOC_ID, admission.reference_summary, extractor
            )
            labels = label_salience(esgs, reference_spans, provider, config.synonym_threshold)
            by_id = {label.esg_id: label.salient for label in labels}
            return {
                "admission_id": admission.admission_id,
                "esgs": [dict(row, salient=by_id[row["esg_id"]]) for row in rows],
            }
        except Exception as exc:
            raise _stage_error("label", admission.admission_id, exc) from exc

    results = _pmap(run, admissions, jobs)
    total = sum(len(row["esgs"]) for row in results)
    salient = sum(1 for row in results for e in row["esgs"] if e["salient"])
    if total:
        print(f"[label] esgs={total} salient={salient} fraction={salient / total:.3f}")
    out = config.artifact("esgs_labeled")
    _write_jsonl(out, results)
    return out


def build_feature_examples(
    admissions: Sequence[Admission],
    spans_by_admission: dict[str, list[EntitySpan]],
    esg_rows: dict[str, list[dict]],
) -> list[tuple[str, int, np.ndarray, bool | None]]:
    """(admission_id, esg_id, features, salient-or-None) per ranked ESG."""
    examples = []
    for admission in admissions:
        rows = esg_rows.get(admission.admission_id, [])
        if not rows:
            continue
        esgs = rebuild_esgs(rows, spans_by_admission.get(admission.admission_id, []),
                            admission.admission_id)
        stats = select.AdmissionStats(
            note_count=len(admission.notes),
            total_esgs=len(esgs),
            concat_length=len(concatenate_notes(admission)),
            body_offsets=body_offsets(admission),
        )
        for esg, row in zip(esgs, rows):
            examples.append(
                (admission.admission_id, esg.esg_id, select.featurize(esg, stats), row.get("salient"))
            )
    return examples


def stage_train_select(
    config: PipelineConfig,
    jobs: int = 1,
    epochs: int = select.DEFAULT_EPOCHS,
    learning_rate: float = select.DEFAULT_LEARNING_RATE,
) -> Path:
    admissions = load_admission_artifact(config)
    esg_rows = load_esg_rows(config, labeled=True)
    spans_by_admission = load_spans_by_admission(config)
    examples = build_feature_examples(admissions, spans_by_admission, esg_rows)
    training = [(features, bool(salient)) for _, _, features, salient in examples]
    model = select.train(training, epochs=epochs, learning_rate=learning_rate, seed=config.seed)
    out = config.artifact("model")
    out.parent.mkdir(parents=True, exist_ok=True)
    select.save_model(model, out)
    return out


def stage_select(config: PipelineConfig, jobs: int = 1) -> Path:
    admissions = load_admission_artifact(config)
    esg_rows = load_esg_rows(config, labeled=False)
    spans_by_admission = load_spans_by_admission(config)
    model = select.load_model(require_artifact(config, "model"))
    examples = build_feature_examples(admissions, spans_by_admission, esg_rows)
    scores_by_admission: dict[str, list[dict]] = {a.admission_id: [] for a in admissions}
    for admission_id, esg_id, features, _ in examples:
        scores_by_admission[admission_id].append(
            {"esg_id": esg_id, "score": select.predict(model, features)}
        )
    out = config.artifact("scores")
    _write_jsonl(
        out,
        [
            {"admission_id": a.admission_id, "scores": scores_by_admission[a.admission_id]}
            for a in admissions
        ],
    )
    return out


def stage_pr_curve(config: PipelineConfig, jobs: int = 1) -> Path:
    esg_rows = load_esg_rows(config, labeled=True)
    score_rows = _read_jsonl(require_artifact(config, "scores"))
    pairs: list[tuple[float, bool]] = []
    for row in score_rows:
        labels = {e["esg_id"]: bool(e["salient"]) for e in esg_rows.get(row["admission_id"], [])}
        for entry in row["scores"]:
            pairs.append((entry["score"], labels[entry["esg_id"]]))
    points = select.sweep_thresholds(pairs)
    out = config.artifact("pr_curve")
    out.parent.mkdir(parents=True, exist_ok=True)
    select.write_pr_csv(points, out)
    return out


def stage_filter(
    config: PipelineConfig,
    jobs: int = 1,
    scorer: str = "oracle",
    keep_headers: str | None = None,
    drop_headers: str | None = None,
) -> Path:
    admissions = load_admission_artifact(config)
    tokenizer = make_tokenizer(config)
    if scorer == "oracle":
        section_scorer: filtering.SectionScorer = filtering.OracleScorer()
    elif scorer == "heuristic":
        section_scorer = filtering.HeuristicScorer.from_files(keep_headers, drop_headers)
    else:
        raise ConfigError(f"scorer must be 'oracle' or 'heuristic', got {scorer!r}")

    def run(admission: Admission) -> tuple[dict, dict]:
        try:
            if scorer == "oracle" and not (admission.reference_summary or "").strip():
                raise DataFormatError("oracle section scoring requires a reference")
            sections = [
                section
                for note in admission.notes
                for section in filtering.segment_sections(note)
            ]
            scores = [
                section_scorer.score(section, admission.reference_summary)
                for section in sections
            ]
            result = filtering.filter_to_budget(sections, scores, config.budget, tokenizer)
            bodies: dict[str, str] = {}
            for section in result.sections:
                bodies[section.note_id] = bodies.get(section.note_id, "") + section.text
            text_row = {
                "admission_id": admission.admission_id,
                "text": concatenate_with_bodies(admission, bodies),
            }

            def describe(section: filtering.Section, score: float) -> dict:
                return {
                    "note_id": section.note_id,
                    "ordinal": section.ordinal,
                    "header": section.header,
                    "score": score,
                    "tokens": count_tokens(section.text, tokenizer),
                }

            report_row = {
                "admission_id": admission.admission_id,
                "kept": [describe(s, sc) for s, sc in zip(result.sections, result.scores)],
                "dropped": [describe(s, sc) for s, sc in zip(result.dropped, result.dropped_scores)],
                "total_tokens": result.total_tokens,
                "truncated": result.truncated,
            }
            return text_row, report_row
        except Exception as exc:
            raise _stage_error("filter", admission.admission_id, exc) from exc

    results = _pmap(run, admissions, jobs)
    out = config.artifact("filtered")
    _write_jsonl(out, [text_row for text_row, _ in results])
    _write_jsonl(config.artifact("filter_report"), [report for _, report in results])
    return out


def stage_tag(config: PipelineConfig, jobs: int = 1, salience_source: str = "oracle") -> Path:
    admissions = load_admission_artifact(config)
    esg_rows = load_esg_rows(config, labeled=salience_source == "oracle")
    salient_ids = load_salient_ids(config, salience_source)
    spans_by_admission = load_spans_by_admission(config)
    source_text = load_source_text(config, admissions)
    extractor = make_extractor(config)

    def run(admission: Admission) -> dict:
        try:
            rows = esg_rows.get(admission.admission_id, [])
            esgs = rebuild_esgs(rows, spans_by_admission.get(admission.admission_id, []),
                                admission.admission_id)
            text = source_text[admission.admission_id]
            spans = extract_entities(admission.admission_id, text, extractor)
            pairs = salient_span_pairs(
                spans, esgs, salient_ids.get(admission.admission_id, set())
            )
            tagged = embed_tags(text, pairs)
            return {
                "admission_id": admission.admission_id,
                "text": tagged.text,
                "tagged_spans": [[s.start, s.end, s.esg_id] for s in tagged.tagged_spans],
            }
        except Exception as exc:
            raise _stage_error("tag", admission.admission_id, exc) from exc

    out = config.artifact("tagged")
    _write_jsonl(out, _pmap(run, admissions, jobs))
    return out


def load_tagged(config: PipelineConfig) -> dict[str, TaggedSource]:
    return {
        row["admission_id"]: TaggedSource(
            text=row["text"],
            tagged_spans=tuple(TaggedSpan(s, e, i) for s, e, i in row["tagged_spans"]),
        )
        for row in _read_jsonl(require_artifact(config, "tagged"))
    }


def _guidance_seed(config: PipelineConfig, admission_id: str) -> int:
    return (config.seed * 1000003 + crc32(admission_id.encode("utf-8"))) & 0xFFFFFFFF


def stage_prompt(
    config: PipelineConfig,
    jobs: int = 1,
    mode: str = NON_GUIDED,
    template_path: str | None = None,
    salience_source: str = "oracle",
    shuffle_guidance: bool = False,
) -> Path:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    admissions = load_admission_artifact(config)
    template = ChatTemplate.from_file(template_path) if template_path else ChatTemplate()
    source_text = load_source_text(config, admissions)
    needs_esgs = mode in (GUIDED, SPEER)
    esg_rows: dict[str, list[dict]] = {}
    salient_ids: dict[str, set[int]] = {}
    spans_by_admission: dict[str, list[EntitySpan]] = {}
    if needs_esgs:
        esg_rows = load_esg_rows(config, labeled=salience_source == "oracle")
        salient_ids = load_salient_ids(config, salience_source)
        spans_by_admission = load_spans_by_admission(config)
    tagged_by_admission = load_tagged(config) if mode == SPEER else {}
    extractor = make_extractor(config) if mode == SPEER else None

    def run(admission: Admission) -> dict:
        try:
            admission_id = admission.admission_id
            guidance = None
            salient_esgs: list[ESG] = []
            if needs_esgs:
                esgs = rebuild_esgs(
                    esg_rows.get(admission_id, []),
                    spans_by_admission.get(admission_id, []),
                    admission_id,
                )
                ids = salient_ids.get(admission_id, set())
                salient_esgs = [e for e in esgs if e.esg_id in ids]
                seed = _guidance_seed(config, admission_id) if shuffle_guidance else None
                guidance = build_guidance(salient_esgs, seed=seed)
            text = build_input(
                mode,
                source_text=source_text[admission_id],
                guidance=guidance,
                tagged=tagged_by_admission.get(admission_id),
                template=template,
            )
            if mode == SPEER:
                target = None
                if (admission.reference_summary or "").strip():
                    plans = r3.extract_oracle_plans(
                        admission.reference_summary, salient_esgs, extractor
                    )
                    target = r3.serialize_r3(plans)
            else:
                target = admission.reference_summary
            return {"admission_id": admission_id, "mode": mode, "input": text,
                    "oracle_target": target}
        except Exception as exc:
            raise _stage_error("prompt", admission.admission_id, exc) from exc

    out = config.outputs_dir() / f"inputs_{mode}.jsonl"
    _write_jsonl(out, _pmap(run, admissions, jobs))
    return out


def stage_oracle_target(
    config: PipelineConfig, jobs: int = 1, salience_source: str = "oracle"
) -> Path:
    admissions = load_admission_artifact(config)
    esg_rows = load_esg_rows(config, labeled=salience_source == "oracle")
    salient_ids = load_salient_ids(config, salience_source)
    spans_by_admission = load_spans_by_admission(config)
    extractor = make_extractor(config)

    def run(admission: Admission) -> dict:
        try:
            esgs = rebuild_esgs(
                esg_rows.get(admission.admission_id, []),
                spans_by_admission.get(admission.admission_id, []),
                admission.admission_id,
            )
            ids = salient_ids.get(admission.admission_id, set())
            plans = r3.extract_oracle_plans(
                admission.reference_summary, [e for e in esgs if e.esg_id in ids], extractor
            )
            return {"admission_id": admission.admission_id, "target": r3.serialize_r3(plans)}
        except Exception as exc:
            raise _stage_error("oracle-target", admission.admission_id, exc) from exc

    out = config.artifact("oracle_targets")
    _write_jsonl(out, _pmap(run, admissions, jobs))
    return out


def stage_mockgen(config: PipelineConfig, jobs: int = 1, salience_source: str = "oracle") -> Path:
    admissions = load_admission_artifact(config)
    esg_rows = load_esg_rows(config, labeled=salience_source == "oracle")
    salient_ids = load_salient_ids(config, salience_source)
    spans_by_admission = load_spans_by_admission(config)
    tagged_by_admission = load_tagged(config)

    def run(admission: Admission) -> dict:
        try:
            esgs = rebuild_esgs(
                esg_rows.get(admission.admission_id, []),
                spans_by_admission.get(admission.admission_id, []),
                admission.admission_id,
            )
            ids = salient_ids.get(admission.admission_id, set())
            output = r3.mock_generate(
                tagged_by_admission[admission.admission_id],
                [e for e in esgs if e.esg_id in ids],
            )
            return {
                "admission_id": admission.admission_id,
                "mode": SPEER,
                "output": r3.serialize_r3(output),
            }
        except Exception as exc:
            raise _stage_error("mockgen", admission.admission_id, exc) from exc

    out = config.artifact("model_outputs")
    _write_jsonl(out, _pmap(run, admissions, jobs))
    return out


def stage_parse(config: PipelineConfig, jobs: int = 1, model_outputs: str | None = None) -> Path:
    path = Path(model_outputs) if model_outputs else require_artifact(config, "model_outputs")
    if not path.exists():
        raise DataFormatError(f"expected model_outputs file {path}; run `mockgen` first")
    rows = _read_jsonl(path)

    def run(row: dict) -> dict:
        admission_id = row.get("admission_id", "?")
        try:
            if row["mode"] == SPEER:
                result = r3.parse_r3(row["output"], config.parse_mode)
                plans = [
                    {
                        "index": p.index,
                        "entities": list(p.planned_entities),
                        "sentence": p.sentence,
                    }
                    for p in result.output.plans
                ]
                return {
                    "admission_id": admission_id,
                    "mode": row["mode"],
                    "summary": result.output.summary,
                    "plans": plans,
                    "warnings": list(result.warnings),
                }
            # non-R3 modes emit the summary directly
            return {
                "admission_id": admission_id,
                "mode": row["mode"],
                "summary": row["output"],
                "plans": [],
                "warnings": [],
            }
        except Exception as exc:
            raise _stage_error("parse", admission_id, exc) from exc

    out = config.artifact("parsed")
    _write_jsonl(out, _pmap(run, rows, jobs))
    return out


def stage_eval(
    config: PipelineConfig,
    jobs: int = 1,
    salience_source: str = "oracle",
    with_rouge: bool = False,
) -> Path:
    admissions = {a.admission_id: a for a in load_admission_artifact(config)}
    esg_rows = load_esg_rows(config, labeled=salience_source == "oracle")
    salient_ids = load_salient_ids(config, salience_source)
    spans_by_admission = load_spans_by_admission(config)
    parsed_rows = _read_jsonl(require_artifact(config, "parsed"))
    extractor = make_extractor(config)
    provider = make_provider(config)
    tokenizer = make_tokenizer(config)

    def run(row: dict) -> metrics_mod.EvalRow:
        admission_id = row["admission_id"]
        try:
            admission = admissions[admission_id]
            esgs = rebuild_esgs(
                esg_rows.get(admission_id, []),
                spans_by_admission.get(admission_id, []),
                admission_id,
            )
            summary = row["summary"]
            model_spans = extract_entities("summary", summary, extractor)
            model_alignment = metrics_mod.align_to_source(
                model_spans, esgs, provider, config.synonym_threshold
            )
            if (admission.reference_summary or "").strip():
                ref_spans = extract_entities(
                    REFERENCE_DOC_ID, admission.reference_summary, extractor
                )
                ref_alignment = metrics_mod.align_to_source(
                    ref_spans, esgs, provider, config.synonym_threshold
                )
            else:
                ref_alignment = metrics_mod.AlignmentResult(frozenset(), (), 0)
            sgp, f1 = metrics_mod.sgp_f1(ref_alignment, model_alignment)
            adh_recall, adh_precision, adh_f1 = metrics_mod.adherence(
                model_alignment, salient_ids.get(admission_id, set())
            )
            rouge1 = rouge2 = None
            if with_rouge and (admission.reference_summary or "").strip():
                rouge1 = filtering.rouge_f1(summary, admission.reference_summary, 1)
                rouge2 = filtering.rouge_f1(summary, admission.reference_summary, 2)
            return metrics_mod.EvalRow(
                admission_id=admission_id,
                mode=row["mode"],
                sgr=metrics_mod.sgr(ref_alignment, model_alignment),
                hr=metrics_mod.hallucination_rate(model_alignment),
                sgp=sgp,
                f1=f1,
                adh_recall=adh_recall,
                adh_precision=adh_precision,
                adh_f1=adh_f1,
                tokens=count_tokens(summary, tokenizer),
                rouge1=rouge1,
                rouge2=rouge2,
            )
        except Exception as exc:
            raise _stage_error("eval", admission_id, exc) from exc

    report = metrics_mod.aggregate(_pmap(run, parsed_rows, jobs))
    out = config.artifact("eval_csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics_mod.write_report_csv(report, out)
    metrics_mod.write_report_json(report, config.artifact("eval_json"))
    return out
