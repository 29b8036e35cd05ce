"""Desk-scale synthetic alignment instances with known gold links.

Builds one random base multigraph, derives each side from it by dropping or
rewiring a fraction of edges independently, and perturbs shared base feature
vectors per side. The gold alignment is the identity bijection, so metric
values have a known-signal reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kgalign.errors import ConfigError
from kgalign.features import l2_normalize_rows, write_embeddings
from kgalign.seeding import STREAM_SYNTH, substream


@dataclass
class SyntheticSpec:
    """Shape and noise knobs of one generated instance."""

    n_entities: int = 200
    n_relations: int = 10
    edge_factor: float = 3.0
    edge_noise: float = 0.1
    feature_dim: int = 32
    feature_noise: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_entities < 2:
            raise ConfigError("need at least 2 entities")
        if self.n_relations < 1:
            raise ConfigError("need at least 1 relation")
        if self.edge_factor <= 0:
            raise ConfigError("edge_factor must be > 0")
        if not 0.0 <= self.edge_noise <= 1.0:
            raise ConfigError("edge_noise must lie in [0, 1]")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.feature_noise < 0.0:
            raise ConfigError("feature_noise must be >= 0")


def _entity_uri(side: int, i: int) -> str:
    return f"http://kg{side}.example.org/resource/Entity_{i}"


def _relation_uri(side: int, j: int) -> str:
    return f"http://kg{side}.example.org/property/rel_{j}"


def _base_triples(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    target = int(spec.edge_factor * spec.n_entities)
    triples: set[tuple[int, int, int]] = set()
    attempts = 0
    while len(triples) < target and attempts < 50 * target:
        attempts += 1
        h = int(rng.integers(spec.n_entities))
        t = int(rng.integers(spec.n_entities))
        if h == t:
            continue
        r = int(rng.integers(spec.n_relations))
        triples.add((h, r, t))
    return sorted(triples)


def _perturb_side(
    base: list[tuple[int, int, int]],
    spec: SyntheticSpec,
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """Drop or rewire edge_noise of the base edges, half and half on average."""
    n_noisy = int(np.floor(spec.edge_noise * len(base)))
    noisy = set(rng.choice(len(base), size=n_noisy, replace=False).tolist()) if n_noisy else set()
    out: set[tuple[int, int, int]] = set()
    for i, (h, r, t) in enumerate(base):
        if i in noisy:
            if rng.random() < 0.5:
                continue  # drop
            t = int(rng.integers(spec.n_entities))  # rewire tail
            if t == h:
                continue
        out.add((h, r, t))

    # Every entity must appear in some triple, or it would vanish from the
    # parsed graph while the gold links still reference it.
    covered = {h for h, _, _ in out} | {t for _, _, t in out}
    for i in range(spec.n_entities):
        if i not in covered:
            other = int(rng.integers(spec.n_entities - 1))
            if other >= i:
                other += 1
            out.add((i, int(rng.integers(spec.n_relations)), other))
            covered.add(i)
            covered.add(other)
    return sorted(out)


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write a full synthetic instance and return the artifact paths.

    Artifacts: two triple files, an entity embedding TSV covering both
    sides, a relation embedding TSV, and the gold links file.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = substream(spec.seed, STREAM_SYNTH)

    base = _base_triples(spec, rng)
    side1 = _perturb_side(base, spec, rng)
    side2 = _perturb_side(base, spec, rng)

    paths = {
        "triples_1": out_dir / "rel_triples_1.tsv",
        "triples_2": out_dir / "rel_triples_2.tsv",
        "embeddings": out_dir / "name_embeddings.tsv",
        "relation_embeddings": out_dir / "relation_embeddings.tsv",
        "ent_links": out_dir / "ent_links.tsv",
    }

    for side, triples, path in ((1, side1, paths["triples_1"]), (2, side2, paths["triples_2"])):
        lines = [
            f"{_entity_uri(side, h)}\t{_relation_uri(side, r)}\t{_entity_uri(side, t)}"
            for h, r, t in triples
        ]
        path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")

    # Shared base vectors, per-side Gaussian perturbation, renormalized.
    base_ent = l2_normalize_rows(rng.standard_normal((spec.n_entities, spec.feature_dim)))
    base_rel = l2_normalize_rows(rng.standard_normal((spec.n_relations, spec.feature_dim)))
    ent_keys: list[str] = []
    ent_rows = []
    rel_keys: list[str] = []
    rel_rows = []
    for side in (1, 2):
        noise = rng.standard_normal(base_ent.shape) * spec.feature_noise
        vectors = l2_normalize_rows(base_ent + noise)
        ent_keys += [_entity_uri(side, i) for i in range(spec.n_entities)]
        ent_rows.append(vectors)
        rel_noise = rng.standard_normal(base_rel.shape) * spec.feature_noise
        rel_keys += [_relation_uri(side, j) for j in range(spec.n_relations)]
        rel_rows.append(l2_normalize_rows(base_rel + rel_noise))
    write_embeddings(paths["embeddings"], ent_keys, np.vstack(ent_rows), spec.feature_dim)
    write_embeddings(paths["relation_embeddings"], rel_keys, np.vstack(rel_rows), spec.feature_dim)

    links = [
        f"{_entity_uri(1, i)}\t{_entity_uri(2, i)}" for i in range(spec.n_entities)
    ]
    paths["ent_links"].write_text("".join(l + "\n" for l in links), encoding="utf-8")
    return paths
