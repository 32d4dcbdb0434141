from __future__ import annotations

import math
import random

import numpy as np
import pytest

from speer.entity import (
    PROBLEM,
    TEST,
    TREATMENT,
    EntitySpan,
    HashedNgramProvider,
    PrecomputedProvider,
    cosine_similarity,
    embed,
)
from speer.esg import (
    ESG,
    SynonymGraph,
    build_synonym_graph,
    form_esgs,
    label_salience,
    rank_and_truncate,
)


def spans_for(surfaces, semantic_type=TEST, doc_id="d1"):
    spans = []
    pos = 0
    for surface in surfaces:
        spans.append(EntitySpan(doc_id, pos, pos + len(surface), surface, semantic_type))
        pos += len(surface) + 1
    return spans


def two_vector_provider(cos: float) -> PrecomputedProvider:
    """Two surfaces 'u' and 'v' whose cosine similarity is exactly `cos`."""
    return PrecomputedProvider(
        {"u": np.array([1.0, 0.0]), "v": np.array([cos, math.sqrt(1 - cos * cos)])}
    )


# --- graph construction -----------------------------------------------------------

def test_exact_duplicates_collapse_to_one_node():
    graph = build_synonym_graph(spans_for(["WBC", "WBC"]), HashedNgramProvider())
    assert graph.surfaces == ("WBC",)
    assert graph.edges == frozenset()


def test_threshold_boundary_is_inclusive():
    spans = spans_for(["u", "v"])
    assert build_synonym_graph(spans, two_vector_provider(0.74), 0.75).edges == frozenset()
    assert build_synonym_graph(spans, two_vector_provider(0.74), 0.70).edges == {(0, 1)}
    assert build_synonym_graph(spans, two_vector_provider(0.75), 0.75).edges == {(0, 1)}


def test_empty_spans_rejected():
    with pytest.raises(ValueError, match="zero spans"):
        build_synonym_graph([], HashedNgramProvider())


def random_surfaces(rng: random.Random, n: int) -> list[str]:
    alphabet = "abcdef"
    out = []
    while len(out) < n:
        word = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 5)))
        out.append(word)
    return out


def test_edges_match_exhaustive_pair_oracle():
    rng = random.Random(43)
    provider = HashedNgramProvider(dimension=16)  # low dim: high cosines happen
    for _ in range(20):
        spans = spans_for(random_surfaces(rng, 30))
        threshold = rng.choice([0.3, 0.5, 0.75])
        graph = build_synonym_graph(spans, provider, threshold)
        surfaces = graph.surfaces
        expected = set()
        for i in range(len(surfaces)):
            for j in range(i + 1, len(surfaces)):
                if cosine_similarity(embed(surfaces[i], provider), embed(surfaces[j], provider)) >= threshold:
                    expected.add((i, j))
        assert graph.edges == frozenset(expected)


# --- ESG formation -------------------------------------------------------------------

def test_chain_forms_single_esg():
    # A-B and B-C connected, no A-C edge: transitive membership
    graph = SynonymGraph(surfaces=("A", "B", "C"), edges=frozenset({(0, 1), (1, 2)}))
    (esg,) = form_esgs(graph, spans_for(["A", "B", "C"]))
    assert set(esg.surfaces) == {"A", "B", "C"}


def test_edgeless_graph_gives_singletons():
    surfaces = ["a", "b", "c", "d"]
    graph = SynonymGraph(surfaces=tuple(surfaces), edges=frozenset())
    esgs = form_esgs(graph, spans_for(surfaces))
    assert len(esgs) == 4
    assert all(len(e.surfaces) == 1 for e in esgs)


def _oracle_components(n: int, edges: set[tuple[int, int]]) -> set[frozenset[int]]:
    """Independent DFS-based connected components."""
    adjacency = {i: set() for i in range(n)}
    for i, j in edges:
        adjacency[i].add(j)
        adjacency[j].add(i)
    seen: set[int] = set()
    components = set()
    for start in range(n):
        if start in seen:
            continue
        stack, component = [start], set()
        while stack:
            node = stack.pop()
            if node in component:
                continue
            component.add(node)
            stack.extend(adjacency[node] - component)
        seen |= component
        components.add(frozenset(component))
    return components


def test_components_match_dfs_oracle_on_random_graphs():
    rng = random.Random(47)
    for _ in range(100):
        n = rng.randint(1, 40)
        surfaces = [f"s{i}" for i in range(n)]
        edges = set()
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.08:
                    edges.add((i, j))
        graph = SynonymGraph(surfaces=tuple(surfaces), edges=frozenset(edges))
        esgs = form_esgs(graph, spans_for(surfaces))
        index = {s: i for i, s in enumerate(surfaces)}
        got = {frozenset(index[s] for s in esg.surfaces) for esg in esgs}
        assert got == _oracle_components(n, edges)


def test_partition_property():
    rng = random.Random(53)
    provider = HashedNgramProvider(dimension=16)
    for _ in range(20):
        base = random_surfaces(rng, 15)
        surfaces = [rng.choice(base) for _ in range(40)]  # repeated mentions
        spans = spans_for(surfaces)
        graph = build_synonym_graph(spans, provider, 0.5)
        esgs = form_esgs(graph, spans)
        assert sum(e.mention_count for e in esgs) == len(spans)
        all_mentions = [m for e in esgs for m in e.mentions]
        assert len({(m.doc_id, m.start) for m in all_mentions}) == len(spans)


def test_component_count_nondecreasing_in_threshold():
    rng = random.Random(59)
    provider = HashedNgramProvider(dimension=16)
    spans = spans_for(random_surfaces(rng, 25))
    counts = []
    for threshold in (0.1, 0.3, 0.5, 0.7, 0.9):
        graph = build_synonym_graph(spans, provider, threshold)
        counts.append(len(form_esgs(graph, spans)))
    assert counts == sorted(counts)


def test_dominant_type_majority_and_tie_order():
    spans = [
        EntitySpan("d", 0, 1, "a", PROBLEM),
        EntitySpan("d", 2, 3, "b", TEST),
        EntitySpan("d", 4, 5, "c", TEST),
    ]
    graph = SynonymGraph(surfaces=("a", "b", "c"), edges=frozenset({(0, 1), (1, 2)}))
    (esg,) = form_esgs(graph, spans)
    assert esg.semantic_type == TEST  # majority
    tie_spans = [
        EntitySpan("d", 0, 1, "a", TEST),
        EntitySpan("d", 2, 3, "b", TREATMENT),
    ]
    graph = SynonymGraph(surfaces=("a", "b"), edges=frozenset({(0, 1)}))
    (esg,) = form_esgs(graph, tie_spans)
    assert esg.semantic_type == TREATMENT  # PROBLEM > TREATMENT > TEST on ties


# --- ranking ----------------------------------------------------------------------

def esg_with_count(esg_id: int, count: int, surface: str, start: int = 0) -> ESG:
    mentions = tuple(
        EntitySpan("d", start + i * (len(surface) + 1), start + i * (len(surface) + 1) + len(surface), surface, TEST)
        for i in range(count)
    )
    return ESG(esg_id=esg_id, surfaces=(surface,), mentions=mentions,
               semantic_type=TEST, mention_count=count)


def test_rank_descending_by_count():
    esgs = [esg_with_count(0, 5, "a"), esg_with_count(1, 2, "b"), esg_with_count(2, 9, "c")]
    ranked = rank_and_truncate(esgs)
    assert [(e.esg_id, e.freq_rank) for e in ranked] == [(2, 1), (0, 2), (1, 3)]


def test_truncation_drops_lowest_counts():
    esgs = [esg_with_count(i, 1 + (i % 50), f"s{i}") for i in range(1030)]
    ranked = rank_and_truncate(esgs, cap=1024)
    assert len(ranked) == 1024
    assert [e.freq_rank for e in ranked] == list(range(1, 1025))
    kept_counts = sorted(e.mention_count for e in ranked)
    dropped = set(e.esg_id for e in esgs) - set(e.esg_id for e in ranked)
    assert len(dropped) == 6
    assert all(e.mention_count <= kept_counts[0] for e in esgs if e.esg_id in dropped)


def test_rank_tie_break_deterministic():
    esgs = [
        esg_with_count(0, 3, "beta", start=40),
        esg_with_count(1, 3, "alpha", start=40),
        esg_with_count(2, 3, "zeta", start=10),
    ]
    first = rank_and_truncate(esgs)
    second = rank_and_truncate(list(esgs))
    assert [e.esg_id for e in first] == [e.esg_id for e in second]
    # earliest first-mention offset first, then smallest surface
    assert [e.esg_id for e in first] == [2, 1, 0]


def test_cap_validated():
    with pytest.raises(ValueError):
        rank_and_truncate([esg_with_count(0, 1, "a")], cap=0)


# --- salience labeling ---------------------------------------------------------------

def test_exact_reference_match_is_salient():
    esgs = [esg_with_count(0, 1, "WBC"), esg_with_count(1, 1, "appendectomy")]
    reference = [EntitySpan("reference", 0, 3, "WBC", TEST)]
    labels = label_salience(esgs, reference, HashedNgramProvider())
    assert [(l.esg_id, l.salient) for l in labels] == [(0, True), (1, False)]


def test_empty_reference_spans_label_all_false():
    esgs = [esg_with_count(0, 1, "WBC")]
    labels = label_salience(esgs, [], HashedNgramProvider())
    assert [l.salient for l in labels] == [False]


def test_missing_reference_rejected():
    with pytest.raises(ValueError, match="requires a reference"):
        label_salience([esg_with_count(0, 1, "WBC")], None, HashedNgramProvider())


def test_labels_match_bruteforce_all_pairs_oracle():
    rng = random.Random(61)
    provider = HashedNgramProvider(dimension=16)
    for _ in range(20):
        spans = spans_for(random_surfaces(rng, rng.randint(5, 20)))
        graph = build_synonym_graph(spans, provider, 0.5)
        esgs = form_esgs(graph, spans)
        reference = spans_for(random_surfaces(rng, rng.randint(0, 6)), doc_id="reference")
        threshold = rng.choice([0.4, 0.6, 0.75])
        labels = label_salience(esgs, reference, provider, threshold)
        for esg, label in zip(esgs, labels):
            expected = any(
                s == r.surface
                or cosine_similarity(embed(s, provider), embed(r.surface, provider)) >= threshold
                for s in esg.surfaces
                for r in reference
            )
            assert label.salient == expected


def test_salient_count_nonincreasing_in_threshold():
    rng = random.Random(67)
    provider = HashedNgramProvider(dimension=16)
    spans = spans_for(random_surfaces(rng, 20))
    graph = build_synonym_graph(spans, provider, 0.4)
    esgs = form_esgs(graph, spans)
    reference = spans_for(random_surfaces(rng, 5), doc_id="reference")
    counts = []
    for threshold in (0.2, 0.4, 0.6, 0.8, 1.0):
        labels = label_salience(esgs, reference, provider, threshold)
        counts.append(sum(l.salient for l in labels))
    assert counts == sorted(counts, reverse=True)
