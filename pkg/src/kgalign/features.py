"""Per-entity input features: name embeddings, random-walk context, concatenation.

Context embeddings come in two flavors: a compositional mode that averages
the element vectors along each walk path, and an exact mode that consumes
precomputed path-sentence vectors from the external embedding exporter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from kgalign.errors import DataError
from kgalign.kg import KnowledgeGraph, display_name
from kgalign.seeding import STREAM_WALKS, entity_stream

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    """Dense vectors keyed by interned id, row i belonging to id i."""

    dim: int
    vectors: np.ndarray
    kind: str  # entity-name | relation-label | path-sentence
    normalized: bool

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise DataError(
                f"embedding table shape {self.vectors.shape} does not match dim {self.dim}"
            )

    @property
    def num_rows(self) -> int:
        return self.vectors.shape[0]


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; all-zero rows stay zero."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def load_embeddings(
    path: str | Path,
    keys: Sequence[str],
    kind: str = "entity-name",
    normalize: bool = True,
) -> EmbeddingTable:
    """Load an embedding TSV and order its rows by the given key list.

    Format: first line ``#dim=<D>``; subsequent ``#`` lines are comments;
    data lines are ``<key>\\t<f1> <f2> ... <fD>``. Every key must have a row.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise DataError(f"cannot read embedding file {path}: {exc}") from exc

    dim: int | None = None
    rows: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#dim="):
                try:
                    dim = int(line[len("#dim=") :].strip())
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad dimension header") from exc
            continue
        if dim is None:
            raise DataError(f"{path}: missing '#dim=<D>' header before data")
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected '<key>\\t<values>'")
        key, value_str = parts
        try:
            values = np.array([float(v) for v in value_str.split()], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparseable float value") from exc
        if values.size != dim:
            raise DataError(
                f"{path}:{lineno}: {values.size} values, header says dim={dim}"
            )
        if not np.all(np.isfinite(values)):
            raise DataError(f"{path}:{lineno}: non-finite embedding value")
        if key in rows:
            logger.warning("%s:%d: duplicate key %r, keeping last", path, lineno, key)
        rows[key] = values
    if dim is None:
        raise DataError(f"{path}: missing '#dim=<D>' header")

    missing = [k for k in keys if k not in rows]
    if missing:
        shown = ", ".join(missing[:20])
        more = f" (and {len(missing) - 20} more)" if len(missing) > 20 else ""
        raise DataError(f"{path}: no embedding row for: {shown}{more}")

    matrix = np.stack([rows[k] for k in keys]) if keys else np.zeros((0, dim))
    if normalize:
        matrix = l2_normalize_rows(matrix)
    return EmbeddingTable(dim=dim, vectors=matrix, kind=kind, normalized=normalize)


def write_embeddings(
    path: str | Path, keys: Sequence[str], vectors: np.ndarray, dim: int
) -> None:
    """Write an embedding TSV in the format load_embeddings expects."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != dim:
        raise DataError(f"vectors shape {vectors.shape} does not match dim {dim}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim={dim}\n")
        for key, row in zip(keys, vectors):
            fh.write(key + "\t" + " ".join(repr(float(v)) for v in row) + "\n")


@dataclass
class WalkPath:
    """Alternating [e0, r1, e1, ..., rk, ek] sequence; may stop at a dead end."""

    start: int
    entities: list[int]
    relations: list[int]

    def elements(self) -> list[tuple[str, int]]:
        """Interleaved ('entity'|'relation', id) sequence."""
        out: list[tuple[str, int]] = [("entity", self.entities[0])]
        for r, e in zip(self.relations, self.entities[1:]):
            out.append(("relation", r))
            out.append(("entity", e))
        return out


def random_walk(
    g: KnowledgeGraph, start: int, k: int, rng: np.random.Generator
) -> WalkPath:
    """k-step uniform random walk over incident edges, either direction.

    Each step picks uniformly among the current entity's (relation, neighbor,
    direction) edges; an entity with no incident edges ends the walk early.
    """
    if k < 1:
        raise ValueError(f"walk length must be >= 1, got {k}")
    if not 0 <= start < g.num_entities:
        raise DataError(f"unknown entity id {start} in graph {g.name!r}")
    entities = [start]
    relations: list[int] = []
    current = start
    for _ in range(k):
        edges = g.adjacency[current]
        if not edges:
            break
        rel, nb, _direction = edges[rng.integers(len(edges))]
        relations.append(rel)
        entities.append(nb)
        current = nb
    return WalkPath(start=start, entities=entities, relations=relations)


def walk_sentence(g: KnowledgeGraph, path: WalkPath, simplify_names: bool = True) -> str:
    """Space-joined display names of all path elements."""
    words: list[str] = []
    for kind, ident in path.elements():
        uri = g.entities[ident] if kind == "entity" else g.relations[ident]
        words.append(display_name(uri, simplify_names))
    return " ".join(words)


def path_key(uri: str, walk_index: int) -> str:
    """Key under which the exporter stores one walk's sentence embedding."""
    return f"{uri}#{walk_index}"


def context_embedding(
    g: KnowledgeGraph,
    ent_table: EmbeddingTable,
    rel_table: EmbeddingTable | None,
    walks: int,
    steps: int,
    seed: int,
    path_table: EmbeddingTable | None = None,
) -> np.ndarray:
    """Per-entity context vectors from repeated random walks.

    Compositional mode (default): each walk's embedding is the mean of the
    vectors of all its elements (entities and relations); the entity context
    is the mean over the ``walks`` walk embeddings, L2-normalized.

    Exact mode (``path_table`` given): the context is the normalized mean of
    the precomputed sentence vectors keyed ``<URI>#<walk-index>``; the table
    must have been produced from walks exported under the same seed.
    """
    if walks < 1:
        raise ValueError(f"walk count must be >= 1, got {walks}")
    n = g.num_entities

    if path_table is not None:
        context = np.zeros((n, path_table.dim))
        for i in range(n):
            rows = np.arange(i * walks, (i + 1) * walks)
            context[i] = path_table.vectors[rows].mean(axis=0)
        return l2_normalize_rows(context)

    if rel_table is None:
        raise DataError("compositional context mode requires relation embeddings")
    if rel_table.dim != ent_table.dim:
        raise DataError(
            f"entity dim {ent_table.dim} != relation dim {rel_table.dim}"
        )

    context = np.zeros((n, ent_table.dim))
    for i in range(n):
        rng = entity_stream(seed, STREAM_WALKS, i)
        acc = np.zeros(ent_table.dim)
        for _ in range(walks):
            path = random_walk(g, i, steps, rng)
            total = ent_table.vectors[path.entities].sum(axis=0)
            if path.relations:
                total = total + rel_table.vectors[path.relations].sum(axis=0)
            acc += total / (len(path.entities) + len(path.relations))
        context[i] = acc / walks
    return l2_normalize_rows(context)


def export_walks(
    g: KnowledgeGraph, walks: int, steps: int, seed: int, simplify_names: bool = True
) -> list[str]:
    """Walk-sentence lines for the exact-mode exporter.

    One line per (entity, walk-index) drawn from the same per-entity streams
    context_embedding uses, so exported sentences and exact-mode lookups
    correspond one to one.
    """
    lines: list[str] = []
    for i in range(g.num_entities):
        rng = entity_stream(seed, STREAM_WALKS, i)
        for t in range(walks):
            path = random_walk(g, i, steps, rng)
            lines.append(
                f"{g.entities[i]}\t{t}\t{walk_sentence(g, path, simplify_names)}"
            )
    return lines


@dataclass
class MultiViewFeatures:
    """Name and context feature blocks plus their concatenation."""

    name_part: np.ndarray
    context_part: np.ndarray
    combined: np.ndarray


def multiview_concat(name: np.ndarray, context: np.ndarray) -> MultiViewFeatures:
    """Concatenate name and context features row-wise, name block first."""
    name = np.asarray(name, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    if name.shape[0] != context.shape[0]:
        raise DataError(
            f"row count mismatch: name {name.shape[0]} vs context {context.shape[0]}"
        )
    return MultiViewFeatures(
        name_part=name,
        context_part=context,
        combined=np.concatenate([name, context], axis=1),
    )


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; defined as 0 for a zero vector (with a warning)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        logger.warning("cosine of zero vector defined as 0")
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity between the rows of two matrices."""
    a_n = l2_normalize_rows(a)
    b_n = l2_normalize_rows(b)
    return a_n @ b_n.T
