"""Entity-grounded evaluation.

Summary mentions (reference and model-generated alike) are aligned to source
ESGs first, so that unsupported reference content cannot reward or punish a
model. Coverage is measured over aligned ESG id sets; the hallucination rate
is measured over raw mentions, so repeating the same unsupported term keeps
costing. Undefined denominators yield None and are excluded from aggregates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .entity import EmbeddingProvider, EntitySpan, cosine_similarity, embed
from .esg import ESG, SYNONYM_THRESHOLD


@dataclass(frozen=True)
class AlignmentResult:
    aligned_esg_ids: frozenset[int]
    unaligned_mentions: tuple[EntitySpan, ...]
    total_mentions: int
    multi_candidate: tuple[EntitySpan, ...] = ()  # mentions whose best cosine tied across ESGs


def align_to_source(
    summary_spans: Sequence[EntitySpan],
    source_esgs: Sequence[ESG],
    provider: EmbeddingProvider,
    threshold: float = SYNONYM_THRESHOLD,
) -> AlignmentResult:
    """Map each mention to the ESG holding an exact-match surface, else to the
    ESG of the highest-cosine surface at or above the threshold (cosine ties
    resolve to the lower esg_id and are flagged), else leave it unaligned."""
    exact: dict[str, int] = {}
    surface_pool: list[tuple[str, int]] = []
    for esg in source_esgs:
        for surface in esg.surfaces:
            exact[surface] = esg.esg_id
            surface_pool.append((surface, esg.esg_id))

    aligned: set[int] = set()
    unaligned: list[EntitySpan] = []
    ties: list[EntitySpan] = []
    for span in summary_spans:
        if span.surface in exact:
            aligned.add(exact[span.surface])
            continue
        vector = embed(span.surface, provider)
        best = -2.0
        best_ids: set[int] = set()
        for surface, esg_id in surface_pool:
            score = cosine_similarity(vector, embed(surface, provider))
            if score > best:
                best, best_ids = score, {esg_id}
            elif score == best:
                best_ids.add(esg_id)
        if best >= threshold:
            aligned.add(min(best_ids))
            if len(best_ids) > 1:
                ties.append(span)
        else:
            unaligned.append(span)
    return AlignmentResult(
        aligned_esg_ids=frozenset(aligned),
        unaligned_mentions=tuple(unaligned),
        total_mentions=len(summary_spans),
        multi_candidate=tuple(ties),
    )


def sgr(ref_alignment: AlignmentResult, model_alignment: AlignmentResult) -> float | None:
    """Source-grounded recall: fraction of reference-aligned ESGs the model
    also covered. None when the reference aligned to nothing."""
    if not ref_alignment.aligned_esg_ids:
        return None
    overlap = ref_alignment.aligned_esg_ids & model_alignment.aligned_esg_ids
    return len(overlap) / len(ref_alignment.aligned_esg_ids)


def hallucination_rate(model_alignment: AlignmentResult) -> float | None:
    """Fraction of model mentions with no source synonym; counted over
    mentions (not ESGs) so repeated hallucinations keep counting."""
    if model_alignment.total_mentions == 0:
        return None
    return len(model_alignment.unaligned_mentions) / model_alignment.total_mentions


def sgp_f1(
    ref_alignment: AlignmentResult, model_alignment: AlignmentResult
) -> tuple[float | None, float | None]:
    """(precision over model-aligned ESGs, harmonic mean with recall)."""
    recall = sgr(ref_alignment, model_alignment)
    if not model_alignment.aligned_esg_ids:
        return None, None
    overlap = ref_alignment.aligned_esg_ids & model_alignment.aligned_esg_ids
    precision = len(overlap) / len(model_alignment.aligned_esg_ids)
    if recall is None or precision + recall == 0.0:
        return precision, None
    return precision, 2.0 * precision * recall / (precision + recall)


def adherence(
    model_alignment: AlignmentResult, guidance_esg_ids: set[int]
) -> tuple[float | None, float | None, float | None]:
    """(recall, precision, f1) of model-aligned ESGs against the guidance set."""
    overlap = model_alignment.aligned_esg_ids & guidance_esg_ids
    recall = len(overlap) / len(guidance_esg_ids) if guidance_esg_ids else None
    precision = (
        len(overlap) / len(model_alignment.aligned_esg_ids)
        if model_alignment.aligned_esg_ids
        else None
    )
    if recall is None or precision is None or precision + recall == 0.0:
        return recall, precision, None
    return recall, precision, 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalRow:
    admission_id: str
    mode: str
    sgr: float | None
    hr: float | None
    sgp: float | None
    f1: float | None
    adh_recall: float | None
    adh_precision: float | None
    adh_f1: float | None
    tokens: int
    rouge1: float | None = None  # populated only by `eval --with-rouge`
    rouge2: float | None = None


METRIC_FIELDS = ("sgr", "hr", "sgp", "f1", "adh_recall", "adh_precision", "adh_f1", "tokens")
_ROUGE_FIELDS = ("rouge1", "rouge2")


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    means: dict[str, float | None]
    counts: dict[str, int]


def aggregate(rows: Sequence[EvalRow]) -> EvalReport:
    """Null-excluding arithmetic means per metric, with per-metric row counts."""
    if not rows:
        raise ValueError("cannot aggregate zero rows")
    with_rouge = any(row.rouge1 is not None for row in rows)
    columns = METRIC_FIELDS + _ROUGE_FIELDS if with_rouge else METRIC_FIELDS
    means: dict[str, float | None] = {}
    counts: dict[str, int] = {}
    for column in columns:
        values = [getattr(row, column) for row in rows if getattr(row, column) is not None]
        counts[column] = len(values)
        means[column] = sum(values) / len(values) if values else None
    return EvalReport(rows=tuple(rows), means=means, counts=counts)


def _cell(value) -> str:
    return "" if value is None else str(value)


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    with_rouge = "rouge1" in report.means
    columns = METRIC_FIELDS + _ROUGE_FIELDS if with_rouge else METRIC_FIELDS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["admission_id", "mode", *columns])
        for row in report.rows:
            writer.writerow([row.admission_id, row.mode, *(_cell(getattr(row, c)) for c in columns)])
        writer.writerow(["aggregate", "", *(_cell(report.means[c]) for c in columns)])


def write_report_json(report: EvalReport, path: str | Path) -> None:
    payload = {
        "rows": [
            {f.name: getattr(row, f.name) for f in fields(EvalRow)} for row in report.rows
        ],
        "aggregate": report.means,
        "counts": report.counts,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
