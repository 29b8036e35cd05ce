"""Export jobs: read inputs, encode, write embedding TSVs.

Output format (shared file contract with the alignment pipeline): first
line ``#dim=<D>``, then ``#model=<id>@<revision>``, then one
``<key>\\t<f1> <f2> ... <fD>`` row per input, in input order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from kgalign_exporter.encoders import DEFAULT_MODEL, build_encoder

logger = logging.getLogger(__name__)


class InputError(RuntimeError):
    """Malformed input file."""


@dataclass
class ExportJob:
    model_id: str = DEFAULT_MODEL
    batch_size: int = 32
    normalize: bool = True
    simplify_names: bool = True


def display_name(uri: str, simplify: bool = True) -> str:
    """Final path segment of a URI with '_' as spaces; same rule both sides
    of the file contract use."""
    if not simplify:
        return uri
    tail = uri.rstrip("/").rsplit("/", 1)[-1]
    tail = tail.rsplit("#", 1)[-1]
    return tail.replace("_", " ")


def read_triple_uris(path: str | Path) -> tuple[list[str], list[str]]:
    """Entity and relation URIs of a triple file, first-appearance order."""
    entities: list[str] = []
    relations: list[str] = []
    seen_e: set[str] = set()
    seen_r: set[str] = set()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read triples {path}: {exc}") from exc
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 tab-separated fields")
        head, rel, tail = fields
        for uri in (head, tail):
            if uri not in seen_e:
                seen_e.add(uri)
                entities.append(uri)
        if rel not in seen_r:
            seen_r.add(rel)
            relations.append(rel)
    return entities, relations


def read_walk_sentences(path: str | Path) -> tuple[list[str], list[str]]:
    """Keys ``<uri>#<walk-index>`` and sentences from a walks file."""
    keys: list[str] = []
    sentences: list[str] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read walks {path}: {exc}") from exc
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 3:
            raise InputError(
                f"{path}:{lineno}: expected '<uri>\\t<walk-index>\\t<sentence>'"
            )
        uri, idx, sentence = fields
        if not idx.isdigit():
            raise InputError(f"{path}:{lineno}: walk index {idx!r} is not a number")
        keys.append(f"{uri}#{idx}")
        sentences.append(sentence)
    return keys, sentences


def _encode(job: ExportJob, texts: list[str]) -> tuple[np.ndarray, str]:
    encoder = build_encoder(job.model_id)
    vectors = encoder.encode(texts, batch_size=job.batch_size)
    if job.normalize:
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        vectors = vectors / np.where(norms == 0.0, 1.0, norms)
    return vectors, f"{job.model_id}@{encoder.revision}"


def write_table(
    path: str | Path, keys: Sequence[str], vectors: np.ndarray, model_tag: str
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim={vectors.shape[1]}\n")
        fh.write(f"#model={model_tag}\n")
        for key, row in zip(keys, vectors):
            fh.write(key + "\t" + " ".join(repr(float(v)) for v in row) + "\n")


def export_name_embeddings(
    job: ExportJob,
    triples: str | Path,
    out: str | Path,
    relations_out: str | Path | None = None,
) -> None:
    """Encode entity display names (and optionally relation labels)."""
    entities, relations = read_triple_uris(triples)
    if not entities:
        raise InputError(f"{triples}: no entities found")

    def name_of(uri: str) -> str:
        name = display_name(uri, job.simplify_names)
        if not name:
            logger.warning("empty display name for %r, using the raw URI", uri)
            return uri
        return name

    vectors, tag = _encode(job, [name_of(u) for u in entities])
    write_table(out, entities, vectors, tag)

    if relations_out is not None:
        rel_vectors, tag = _encode(job, [name_of(u) for u in relations])
        write_table(relations_out, relations, rel_vectors, tag)


def export_sentence_embeddings(
    job: ExportJob, walks: str | Path, out: str | Path
) -> None:
    """Encode full walk sentences, keyed ``<uri>#<walk-index>``."""
    keys, sentences = read_walk_sentences(walks)
    if not keys:
        raise InputError(f"{walks}: no walk sentences found")
    vectors, tag = _encode(job, sentences)
    write_table(out, keys, vectors, tag)
