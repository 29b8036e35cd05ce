"""Knowledge-graph parsing, interning, and indexing.

Graphs are built once and treated as immutable afterwards. Entity and
relation ids are dense integers assigned in first-appearance order, which
keeps every downstream artifact deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from kgalign.errors import DataError

logger = logging.getLogger(__name__)

OUT = "out"
IN = "in"

KG1 = "KG1"
KG2 = "KG2"


@dataclass(frozen=True)
class RelationTriple:
    """One (head, relation, tail) edge, all fields interned ids."""

    head: int
    relation: int
    tail: int


@dataclass(eq=False)
class KnowledgeGraph:
    """Interned triple store with adjacency indices.

    ``entities[i]`` / ``relations[j]`` map dense ids back to source URIs;
    ``adjacency[i]`` lists (relation-id, neighbor-id, direction) for every
    triple incident to entity i.
    """

    name: str
    entities: list[str]
    relations: list[str]
    triples: set[RelationTriple]
    entity_index: dict[str, int] = field(repr=False)
    relation_index: dict[str, int] = field(repr=False)
    adjacency: list[list[tuple[int, int, str]]] = field(repr=False)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.triples == other.triples
        )

    def __repr__(self) -> str:  # keep large graphs printable
        return (
            f"KnowledgeGraph(name={self.name!r}, entities={self.num_entities}, "
            f"relations={self.num_relations}, triples={len(self.triples)})"
        )


def _build_adjacency(
    n_entities: int, triples: Iterable[RelationTriple]
) -> list[list[tuple[int, int, str]]]:
    adjacency: list[list[tuple[int, int, str]]] = [[] for _ in range(n_entities)]
    for t in sorted(triples, key=lambda t: (t.head, t.relation, t.tail)):
        adjacency[t.head].append((t.relation, t.tail, OUT))
        adjacency[t.tail].append((t.relation, t.head, IN))
    return adjacency


def build_graph(
    uri_triples: Sequence[tuple[str, str, str]], name: str
) -> KnowledgeGraph:
    """Intern URI triples into a KnowledgeGraph.

    Ids are assigned in first-appearance order (head, relation, tail within
    each triple, triples in input order). Duplicate triples collapse to one.
    """
    entities: list[str] = []
    relations: list[str] = []
    entity_index: dict[str, int] = {}
    relation_index: dict[str, int] = {}

    def intern(table: list[str], index: dict[str, int], key: str) -> int:
        ident = index.get(key)
        if ident is None:
            ident = len(table)
            index[key] = ident
            table.append(key)
        return ident

    triples: set[RelationTriple] = set()
    duplicates = 0
    for h_uri, r_uri, t_uri in uri_triples:
        h = intern(entities, entity_index, h_uri)
        r = intern(relations, relation_index, r_uri)
        t = intern(entities, entity_index, t_uri)
        triple = RelationTriple(h, r, t)
        if triple in triples:
            duplicates += 1
        else:
            triples.add(triple)
    if duplicates:
        logger.warning("%s: dropped %d duplicate triple(s)", name, duplicates)

    return KnowledgeGraph(
        name=name,
        entities=entities,
        relations=relations,
        triples=triples,
        entity_index=entity_index,
        relation_index=relation_index,
        adjacency=_build_adjacency(len(entities), triples),
    )


def parse_triples(path: str | Path, name: str = KG1) -> KnowledgeGraph:
    """Parse a tab-separated triple file (head, relation, tail per line)."""
    uri_triples: list[tuple[str, str, str]] = []
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read triple file {path}: {exc}") from exc
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 3:
            raise DataError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
            )
        head, relation, tail = fields
        if not head or not relation or not tail:
            raise DataError(f"{path}:{lineno}: empty entity or relation token")
        uri_triples.append((head, relation, tail))
    return build_graph(uri_triples, name)


def triple_lines(g: KnowledgeGraph) -> list[str]:
    """Serialize back to URI triple lines, in deterministic (id-sorted) order."""
    ordered = sorted(g.triples, key=lambda t: (t.head, t.relation, t.tail))
    return [
        f"{g.entities[t.head]}\t{g.relations[t.relation]}\t{g.entities[t.tail]}"
        for t in ordered
    ]


def write_triples(g: KnowledgeGraph, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in triple_lines(g)), encoding="utf-8")


def neighbors(g: KnowledgeGraph, entity: int, self_loop: bool = False) -> list[int]:
    """Undirected neighborhood of an entity, deduplicated and id-sorted.

    Includes the entity itself iff ``self_loop`` is set, regardless of any
    reflexive triples.
    """
    if not 0 <= entity < g.num_entities:
        raise DataError(f"unknown entity id {entity} in graph {g.name!r}")
    seen = {nb for _, nb, _ in g.adjacency[entity]}
    seen.discard(entity)
    if self_loop:
        seen.add(entity)
    return sorted(seen)


def parse_links(path: str | Path) -> list[tuple[str, str]]:
    """Parse a ground-truth links file (URI pair per line)."""
    pairs: list[tuple[str, str]] = []
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read links file {path}: {exc}") from exc
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 tab-separated fields")
        pairs.append((fields[0], fields[1]))
    return pairs


def display_name(uri: str, simplify: bool = True) -> str:
    """Human-readable name of a URI: final path segment, '_' -> ' '."""
    if not simplify:
        return uri
    tail = uri.rstrip("/").rsplit("/", 1)[-1]
    tail = tail.rsplit("#", 1)[-1]
    return tail.replace("_", " ") or uri


@dataclass(eq=False)
class PrimalGraph:
    """Two source KGs merged into one disjoint-union graph.

    ``origin[i]`` tags every merged entity with its source graph; the id
    maps are bijections from each source id space into the merged space.
    """

    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    merged: KnowledgeGraph
    origin: list[str]
    entity_map_1: list[int]
    entity_map_2: list[int]
    relation_map_1: list[int]
    relation_map_2: list[int]

    @property
    def n1(self) -> int:
        return self.kg1.num_entities

    @property
    def n2(self) -> int:
        return self.kg2.num_entities


def build_primal(kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> PrimalGraph:
    """Disjoint union of two graphs under a shared dense id space.

    KG1 entities keep their ids; KG2 entities are shifted by |E1|. No triple
    ever crosses the origin boundary; cross-graph signal enters only through
    training.
    """
    n1, n2 = kg1.num_entities, kg2.num_entities
    r1, r2 = kg1.num_relations, kg2.num_relations

    entities = list(kg1.entities) + list(kg2.entities)
    relations = list(kg1.relations) + list(kg2.relations)
    triples = {RelationTriple(t.head, t.relation, t.tail) for t in kg1.triples}
    triples |= {
        RelationTriple(t.head + n1, t.relation + r1, t.tail + n1) for t in kg2.triples
    }

    # Duplicate URIs across the two sources are legal in the merged table;
    # the index maps each URI to its first (KG1-side) id.
    entity_index: dict[str, int] = {}
    for i, uri in enumerate(entities):
        entity_index.setdefault(uri, i)
    relation_index: dict[str, int] = {}
    for j, uri in enumerate(relations):
        relation_index.setdefault(uri, j)

    merged = KnowledgeGraph(
        name="primal",
        entities=entities,
        relations=relations,
        triples=triples,
        entity_index=entity_index,
        relation_index=relation_index,
        adjacency=_build_adjacency(n1 + n2, triples),
    )
    return PrimalGraph(
        kg1=kg1,
        kg2=kg2,
        merged=merged,
        origin=[KG1] * n1 + [KG2] * n2,
        entity_map_1=list(range(n1)),
        entity_map_2=list(range(n1, n1 + n2)),
        relation_map_1=list(range(r1)),
        relation_map_2=list(range(r1, r1 + r2)),
    )


def split_primal(primal: PrimalGraph) -> tuple[KnowledgeGraph, KnowledgeGraph]:
    """Recover the two source graphs from a primal graph.

    The merge shifts KG2 ids by fixed offsets, so the split is exact id
    arithmetic: no triple can straddle the origin boundary.
    """
    n1, r1 = primal.kg1.num_entities, primal.kg1.num_relations
    t1: set[RelationTriple] = set()
    t2: set[RelationTriple] = set()
    for t in primal.merged.triples:
        if primal.origin[t.head] == KG1:
            t1.add(t)
        else:
            t2.add(RelationTriple(t.head - n1, t.relation - r1, t.tail - n1))
    return (
        subgraph_with_triples(primal.kg1, t1),
        subgraph_with_triples(primal.kg2, t2),
    )


def subgraph_with_triples(
    g: KnowledgeGraph, triples: Iterable[RelationTriple]
) -> KnowledgeGraph:
    """Same entity/relation tables, different triple set (adjacency rebuilt)."""
    triple_set = set(triples)
    for t in triple_set:
        if not (0 <= t.head < g.num_entities and 0 <= t.tail < g.num_entities):
            raise DataError(f"triple {t} references entity outside graph {g.name!r}")
        if not 0 <= t.relation < g.num_relations:
            raise DataError(f"triple {t} references relation outside graph {g.name!r}")
    return KnowledgeGraph(
        name=g.name,
        entities=list(g.entities),
        relations=list(g.relations),
        triples=triple_set,
        entity_index=dict(g.entity_index),
        relation_index=dict(g.relation_index),
        adjacency=_build_adjacency(g.num_entities, triple_set),
    )
