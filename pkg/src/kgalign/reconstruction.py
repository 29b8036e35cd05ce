"""Relation-structure reconstruction.

Runs once before training: mine mutual-best pseudo-label entity pairs from
name similarity, match neighbor pairs one-to-one, count which relation pairs
those matches imply, and keep only triples whose relation participates in a
sufficiently supported relation pair.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from kgalign.errors import DataError
from kgalign.features import cosine_matrix
from kgalign.kg import IN, OUT, KnowledgeGraph, PrimalGraph, RelationTriple, neighbors

logger = logging.getLogger(__name__)


@dataclass
class PseudoLabelSet:
    """Mutual-best entity pairs above the similarity threshold, one-to-one."""

    pairs: set[tuple[int, int]]
    scores: dict[tuple[int, int], float] = field(default_factory=dict)


@dataclass
class AlignedRelationSet:
    """Relation pairs whose neighbor-match count cleared the filter."""

    pairs: set[tuple[int, int]]
    counts: dict[tuple[int, int], int] = field(default_factory=dict)


@dataclass
class ReconstructedTriples:
    """Filtered triple sets per KG, with pre-fallback sets and statistics.

    ``t_new_*`` is what feeds the encoder; when filtering would leave a graph
    edgeless it falls back to the unfiltered triples (``fallback_*`` set) while
    ``filtered_*`` keeps the raw filter result.
    """

    t_new_1: set[RelationTriple]
    t_new_2: set[RelationTriple]
    filtered_1: set[RelationTriple]
    filtered_2: set[RelationTriple]
    fallback_1: bool
    fallback_2: bool
    pseudo_labels: PseudoLabelSet
    relations: AlignedRelationSet

    def stats(self, g1: KnowledgeGraph, g2: KnowledgeGraph) -> dict:
        """JSON-ready summary for the CLI stats report."""
        pairs = sorted(self.relations.pairs)

        def per_relation(g: KnowledgeGraph, kept: set[RelationTriple]) -> dict:
            totals = Counter(t.relation for t in g.triples)
            retained = Counter(t.relation for t in kept)
            return {
                g.relations[r]: {"retained": retained[r], "dropped": totals[r] - retained[r]}
                for r in sorted(totals)
            }

        return {
            "pseudo_label_count": len(self.pseudo_labels.pairs),
            "relation_pairs": [
                [g1.relations[r1], g2.relations[r2], self.relations.counts[(r1, r2)]]
                for r1, r2 in pairs
            ],
            "triples_kept_1": len(self.t_new_1),
            "triples_kept_2": len(self.t_new_2),
            "triples_total_1": len(g1.triples),
            "triples_total_2": len(g2.triples),
            "per_relation_1": per_relation(g1, self.t_new_1),
            "per_relation_2": per_relation(g2, self.t_new_2),
            "fallback_1": self.fallback_1,
            "fallback_2": self.fallback_2,
        }


def candidate_pairs(sim: np.ndarray, gamma_sim: float) -> set[tuple[int, int]]:
    """All (row, col) pairs strictly above the similarity threshold."""
    rows, cols = np.nonzero(sim > gamma_sim)
    return {(int(i), int(j)) for i, j in zip(rows, cols)}


def pseudo_labels(sim: np.ndarray, gamma_sim: float) -> PseudoLabelSet:
    """Bidirectional mutual-best pairs among threshold candidates.

    (i, j) is kept iff j is i's best candidate column and i is j's best
    candidate row; argmax ties break toward the smallest id.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n1, n2 = sim.shape
    mask = sim > gamma_sim
    if not mask.any():
        return PseudoLabelSet(pairs=set())

    masked = np.where(mask, sim, -np.inf)
    # np.argmax returns the first maximum, i.e. the smallest id on ties.
    best_col = np.argmax(masked, axis=1)
    best_row = np.argmax(masked, axis=0)

    pairs: set[tuple[int, int]] = set()
    scores: dict[tuple[int, int], float] = {}
    for i in range(n1):
        j = int(best_col[i])
        if mask[i, j] and int(best_row[j]) == i:
            pairs.add((i, j))
            scores[(i, j)] = float(sim[i, j])
    return PseudoLabelSet(pairs=pairs, scores=scores)


def neighbor_match(
    pair: tuple[int, int],
    g1: KnowledgeGraph,
    g2: KnowledgeGraph,
    sim: np.ndarray,
    tau_sim: float,
) -> set[tuple[int, int]]:
    """One-to-one matching between the neighbors of a pseudo-label pair.

    Candidate neighbor pairs above the threshold are taken greedily in
    descending similarity (ties by smallest id pair); a neighbor already
    matched on either side is skipped.
    """
    a, b = pair
    n_a = neighbors(g1, a, self_loop=False)
    n_b = neighbors(g2, b, self_loop=False)
    candidates = [
        (float(sim[u, v]), u, v)
        for u in n_a
        for v in n_b
        if sim[u, v] > tau_sim
    ]
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    used_u: set[int] = set()
    used_v: set[int] = set()
    matched: set[tuple[int, int]] = set()
    for _score, u, v in candidates:
        if u in used_u or v in used_v:
            continue
        matched.add((u, v))
        used_u.add(u)
        used_v.add(v)
    return matched


def relation_match_counts(
    anchored_matches: list[tuple[tuple[int, int], tuple[int, int]]],
    g1: KnowledgeGraph,
    g2: KnowledgeGraph,
) -> Counter:
    """Count relation pairs implied by matched neighbors.

    For an anchor (a, b) with matched neighbors (u, v): every g1 triple
    linking a and u pairs with every g2 triple linking b and v *in the same
    orientation* (a->u with b->v, u->a with v->b); each such pairing adds one.
    """
    counter: Counter = Counter()
    for (a, b), (u, v) in anchored_matches:
        out_1 = [r for r, nb, d in g1.adjacency[a] if nb == u and d == OUT]
        in_1 = [r for r, nb, d in g1.adjacency[a] if nb == u and d == IN]
        out_2 = [r for r, nb, d in g2.adjacency[b] if nb == v and d == OUT]
        in_2 = [r for r, nb, d in g2.adjacency[b] if nb == v and d == IN]
        for r1 in out_1:
            for r2 in out_2:
                counter[(r1, r2)] += 1
        for r1 in in_1:
            for r2 in in_2:
                counter[(r1, r2)] += 1
    return counter


def filter_relations(counter: Counter, gamma_r: float) -> AlignedRelationSet:
    """Keep relation pairs whose match count is strictly above the threshold."""
    pairs = {pair for pair, count in counter.items() if count > gamma_r}
    return AlignedRelationSet(
        pairs=pairs, counts={p: int(counter[p]) for p in pairs}
    )


def reconstruct_triples(
    g1: KnowledgeGraph, g2: KnowledgeGraph, r_align: AlignedRelationSet
) -> tuple[set[RelationTriple], set[RelationTriple], set[RelationTriple], set[RelationTriple]]:
    """Filter each KG to triples whose relation appears in an aligned pair.

    Membership is component-wise: g1 keeps relations appearing as a first
    component, g2 as a second. A side that would end up edgeless falls back
    to its unfiltered triples. Returns (t_new_1, t_new_2, filtered_1,
    filtered_2) where the filtered sets are the raw pre-fallback results.
    """
    keep_1 = {r1 for r1, _ in r_align.pairs}
    keep_2 = {r2 for _, r2 in r_align.pairs}
    filtered_1 = {t for t in g1.triples if t.relation in keep_1}
    filtered_2 = {t for t in g2.triples if t.relation in keep_2}

    if not filtered_1:
        logger.warning(
            "%s: relation filter left no triples, keeping all %d",
            g1.name,
            len(g1.triples),
        )
    if not filtered_2:
        logger.warning(
            "%s: relation filter left no triples, keeping all %d",
            g2.name,
            len(g2.triples),
        )
    t_new_1 = filtered_1 if filtered_1 else set(g1.triples)
    t_new_2 = filtered_2 if filtered_2 else set(g2.triples)
    return t_new_1, t_new_2, filtered_1, filtered_2


def run_algorithm(
    primal: PrimalGraph,
    name_features: np.ndarray,
    gamma_sim: float = 0.8,
    tau_sim: float = 0.8,
    gamma_r: float = 5,
) -> ReconstructedTriples:
    """Full reconstruction pass over a primal graph.

    ``name_features`` holds one row per merged entity (KG1 rows first);
    pseudo-labels are mined from name features only.
    """
    g1, g2 = primal.kg1, primal.kg2
    n1 = g1.num_entities
    if name_features.shape[0] != n1 + g2.num_entities:
        raise DataError(
            f"name feature rows {name_features.shape[0]} != merged entity count "
            f"{n1 + g2.num_entities}"
        )
    sim = cosine_matrix(name_features[:n1], name_features[n1:])

    pl = pseudo_labels(sim, gamma_sim)
    anchored: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for pair in sorted(pl.pairs):
        for match in sorted(neighbor_match(pair, g1, g2, sim, tau_sim)):
            anchored.append((pair, match))
    counter = relation_match_counts(anchored, g1, g2)
    r_align = filter_relations(counter, gamma_r)
    t_new_1, t_new_2, filtered_1, filtered_2 = reconstruct_triples(g1, g2, r_align)

    return ReconstructedTriples(
        t_new_1=t_new_1,
        t_new_2=t_new_2,
        filtered_1=filtered_1,
        filtered_2=filtered_2,
        fallback_1=not filtered_1,
        fallback_2=not filtered_2,
        pseudo_labels=pl,
        relations=r_align,
    )
