"""Entity Synonym Groups: the synonym graph, grouping, ranking, and oracle salience.

Unique mention surfaces become graph nodes; two nodes are linked when their
embeddings' cosine similarity clears the synonym threshold. Connected
components of that graph are the ESGs -- membership is transitive, so "WBC"
and "leukocytosis" can share a group through "WBC count" without being direct
synonyms. An ESG is salient when at least one of its surfaces matches (exactly
or as a synonym) an entity extracted from the reference summary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .entity import (
    PROBLEM,
    TEST,
    TREATMENT,
    EmbeddingProvider,
    EntitySpan,
    cosine_similarity,
    embed,
)

SYNONYM_THRESHOLD = 0.75
ESG_CAP = 1024

_TYPE_PRIORITY = {PROBLEM: 0, TREATMENT: 1, TEST: 2}


@dataclass(frozen=True)
class SynonymGraph:
    surfaces: tuple[str, ...]
    edges: frozenset[tuple[int, int]]  # (i, j) with i < j


@dataclass(frozen=True)
class ESG:
    esg_id: int
    surfaces: tuple[str, ...]
    mentions: tuple[EntitySpan, ...]
    semantic_type: str
    mention_count: int
    freq_rank: int | None = None

    def __post_init__(self):
        if not self.surfaces:
            raise ValueError("ESG must have at least one surface")
        if self.mention_count != len(self.mentions) or self.mention_count < 1:
            raise ValueError("mention_count must equal len(mentions) and be >= 1")


@dataclass(frozen=True)
class SalienceLabel:
    esg_id: int
    salient: bool


def build_synonym_graph(
    spans: list[EntitySpan],
    provider: EmbeddingProvider,
    threshold: float = SYNONYM_THRESHOLD,
) -> SynonymGraph:
    """One node per unique surface (exact duplicates collapse); an edge joins
    distinct surfaces whose cosine similarity is >= threshold."""
    if not spans:
        raise ValueError("cannot build a synonym graph from zero spans")
    surfaces: list[str] = []
    seen: set[str] = set()
    for span in spans:
        if span.surface not in seen:
            seen.add(span.surface)
            surfaces.append(span.surface)
    vectors = [embed(surface, provider) for surface in surfaces]
    edges = set()
    for i in range(len(surfaces)):
        for j in range(i + 1, len(surfaces)):
            if cosine_similarity(vectors[i], vectors[j]) >= threshold:
                edges.add((i, j))
    return SynonymGraph(surfaces=tuple(surfaces), edges=frozenset(edges))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _dominant_type(mentions: list[EntitySpan]) -> str:
    counts: dict[str, int] = {}
    for mention in mentions:
        counts[mention.semantic_type] = counts.get(mention.semantic_type, 0) + 1
    return max(counts, key=lambda t: (counts[t], -_TYPE_PRIORITY[t]))


def form_esgs(graph: SynonymGraph, spans: list[EntitySpan]) -> list[ESG]:
    """One ESG per connected component; every span joins the ESG that holds
    its surface, so the result is a total, disjoint partition of the spans."""
    index_of = {surface: i for i, surface in enumerate(graph.surfaces)}
    uf = _UnionFind(len(graph.surfaces))
    for i, j in graph.edges:
        uf.union(i, j)
    root_to_component: dict[int, int] = {}
    component_nodes: list[list[int]] = []
    for i in range(len(graph.surfaces)):
        root = uf.find(i)
        if root not in root_to_component:
            root_to_component[root] = len(component_nodes)
            component_nodes.append([])
        component_nodes[root_to_component[root]].append(i)

    component_mentions: list[list[EntitySpan]] = [[] for _ in component_nodes]
    for span in spans:
        if span.surface not in index_of:
            raise ValueError(f"span surface {span.surface!r} is not a graph node")
        component_mentions[root_to_component[uf.find(index_of[span.surface])]].append(span)

    esgs = []
    for esg_id, (nodes, mentions) in enumerate(zip(component_nodes, component_mentions)):
        esgs.append(
            ESG(
                esg_id=esg_id,
                surfaces=tuple(graph.surfaces[i] for i in nodes),
                mentions=tuple(mentions),
                semantic_type=_dominant_type(mentions),
                mention_count=len(mentions),
            )
        )
    return esgs


def rank_and_truncate(esgs: list[ESG], cap: int = ESG_CAP) -> list[ESG]:
    """Sort by mention count (most first), assign freq_rank 1..K, keep `cap`.

    Ties break on the first mention's offset, then the smallest surface, so
    ranking is deterministic across runs.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    ordered = sorted(
        esgs,
        key=lambda e: (-e.mention_count, e.mentions[0].start, min(e.surfaces)),
    )
    return [replace(esg, freq_rank=rank) for rank, esg in enumerate(ordered[:cap], start=1)]


def label_salience(
    source_esgs: list[ESG],
    reference_spans: list[EntitySpan] | None,
    provider: EmbeddingProvider,
    threshold: float = SYNONYM_THRESHOLD,
) -> list[SalienceLabel]:
    """Salient iff some ESG surface exactly matches, or is a >=threshold
    synonym of, some reference-summary mention surface."""
    if reference_spans is None:
        raise ValueError("oracle labeling requires a reference")
    reference_surfaces: list[str] = []
    seen: set[str] = set()
    for span in reference_spans:
        if span.surface not in seen:
            seen.add(span.surface)
            reference_surfaces.append(span.surface)

    labels = []
    for esg in source_esgs:
        salient = False
        for surface in esg.surfaces:
            if surface in seen:
                salient = True
                break
            vector = embed(surface, provider)
            if any(
                cosine_similarity(vector, embed(ref, provider)) >= threshold
                for ref in reference_surfaces
            ):
                salient = True
                break
        labels.append(SalienceLabel(esg_id=esg.esg_id, salient=salient))
    return labels
