"""Configuration and end-to-end orchestration.

Stages run in pipeline order (ingest, features, reconstruction, training,
alignment, evaluation), each writing its artifacts into the output directory
so any stage can be rerun from the previous stage's files. All randomness
derives from the single configured seed through named sub-streams.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kgalign import alignment, reconstruction
from kgalign.errors import ConfigError, DataError, KgAlignError, NumericalError
from kgalign.features import (
    context_embedding,
    export_walks,
    load_embeddings,
    multiview_concat,
    path_key,
    write_embeddings,
)
from kgalign.kg import (
    KnowledgeGraph,
    PrimalGraph,
    RelationTriple,
    build_primal,
    parse_links,
    parse_triples,
    subgraph_with_triples,
    write_triples,
)
from kgalign.lcat import LcatParams, Neighborhood, forward, save_checkpoint
from kgalign.seeding import STREAM_INIT, STREAM_SPLIT, substream
from kgalign.training import TrainConfig, TrainState, train

logger = logging.getLogger(__name__)

CONTEXT_MODES = ("compositional", "exact", "none")
RANK_MODES = (alignment.MODE_CONSISTENCY, alignment.MODE_COSINE)
CANDIDATE_SPACES = ("full", "gold")
EVAL_SPLITS = ("test", "all")


@dataclass
class PipelineConfig:
    """One JSON document controlling every stage."""

    # input and output paths
    triples_1: str = ""
    triples_2: str = ""
    embeddings: str = ""
    relation_embeddings: str | None = None
    path_embeddings: str | None = None
    ent_links: str | None = None
    output_dir: str = "out"

    # reconstruction thresholds
    gamma_sim: float = 0.8
    tau_sim: float = 0.8
    gamma_r: float = 5.0

    # random-walk context
    walks_k: int = 3
    walks_t: int = 5

    # encoder dimensions
    d_model: int = 256
    d_out: int = 256

    # contrastive training
    perturb1: float = 0.2
    perturb2: float = 0.3
    tau: float = 0.08
    momentum: float = 0.999
    batch_size: int = 1024
    epochs: int = 800
    learning_rate: float = 1e-3

    seed: int = 0

    # mode flags
    context_mode: str = "compositional"
    rank_mode: str = alignment.MODE_CONSISTENCY
    candidates: str = "full"
    val_fraction: float = 0.1
    test_fraction: float = 0.7
    eval_split: str = "test"

    simplify_names: bool = True
    block_size: int = 4096

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        config = cls(**raw)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.context_mode not in CONTEXT_MODES:
            raise ConfigError(f"context_mode must be one of {CONTEXT_MODES}")
        if self.rank_mode not in RANK_MODES:
            raise ConfigError(f"rank_mode must be one of {RANK_MODES}")
        if self.candidates not in CANDIDATE_SPACES:
            raise ConfigError(f"candidates must be one of {CANDIDATE_SPACES}")
        if self.eval_split not in EVAL_SPLITS:
            raise ConfigError(f"eval_split must be one of {EVAL_SPLITS}")
        # Cosine lives in [-1, 1] but an unreachable threshold is a legal
        # degenerate config that exercises the reconstruction fallback.
        if not np.isfinite(self.gamma_sim) or not np.isfinite(self.tau_sim):
            raise ConfigError("gamma_sim and tau_sim must be finite")
        if self.gamma_r < 0:
            raise ConfigError("gamma_r must be >= 0")
        if self.walks_k < 1 or self.walks_t < 1:
            raise ConfigError("walks_k and walks_t must be >= 1")
        if self.d_model < 1 or self.d_out < 1:
            raise ConfigError("encoder dims must be >= 1")
        if self.d_model != self.d_out:
            raise ConfigError(
                f"output mix needs d_out == d_model, got {self.d_out} != {self.d_model}"
            )
        if not 0.0 <= self.val_fraction <= 1.0 or not 0.0 <= self.test_fraction <= 1.0:
            raise ConfigError("split fractions must lie in [0, 1]")
        if self.val_fraction + self.test_fraction > 1.0 + 1e-12:
            raise ConfigError("val_fraction + test_fraction must not exceed 1")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        self.train_config().validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            perturb1=self.perturb1,
            perturb2=self.perturb2,
            tau=self.tau,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    def out(self, name: str) -> Path:
        return Path(self.output_dir) / name


def write_json(path: str | Path, obj: object) -> None:
    Path(path).write_text(
        json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


@contextmanager
def _stage(name: str):
    """Prefix toolkit errors with the failing stage's name."""
    try:
        yield
    except KgAlignError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# stages


def stage_ingest(config: PipelineConfig) -> PrimalGraph:
    """Parse both triple files, merge, and write the normalized copies."""
    with _stage("ingest"):
        g1 = parse_triples(config.triples_1, "KG1")
        g2 = parse_triples(config.triples_2, "KG2")
        primal = build_primal(g1, g2)
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_triples(g1, config.out("kg1_triples.tsv"))
        write_triples(g2, config.out("kg2_triples.tsv"))
        write_json(
            config.out("ingest_stats.json"),
            {
                "kg1": {"entities": g1.num_entities, "relations": g1.num_relations, "triples": len(g1.triples)},
                "kg2": {"entities": g2.num_entities, "relations": g2.num_relations, "triples": len(g2.triples)},
            },
        )
        return primal


def stage_walk_export(config: PipelineConfig, primal: PrimalGraph) -> Path:
    """Write walk sentences for external sentence-level embedding."""
    with _stage("walks-export"):
        lines = export_walks(
            primal.merged,
            walks=config.walks_t,
            steps=config.walks_k,
            seed=config.seed,
            simplify_names=config.simplify_names,
        )
        path = config.out("walk_sentences.tsv")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        return path


def stage_features(
    config: PipelineConfig, primal: PrimalGraph
) -> tuple[np.ndarray, np.ndarray]:
    """Load name embeddings and assemble the combined input features.

    Returns (name features, combined features), both with one row per
    merged entity.
    """
    with _stage("features"):
        merged = primal.merged
        name_table = load_embeddings(
            config.embeddings, merged.entities, kind="entity-name", normalize=True
        )
        names = name_table.vectors

        if config.context_mode == "none":
            return names, names.copy()

        if config.context_mode == "compositional":
            if config.relation_embeddings is None:
                raise ConfigError(
                    "compositional context_mode requires relation_embeddings"
                )
            rel_table = load_embeddings(
                config.relation_embeddings,
                merged.relations,
                kind="relation-label",
                normalize=True,
            )
            context = context_embedding(
                merged,
                name_table,
                rel_table,
                walks=config.walks_t,
                steps=config.walks_k,
                seed=config.seed,
            )
        else:  # exact
            if config.path_embeddings is None:
                raise ConfigError("exact context_mode requires path_embeddings")
            keys = [
                path_key(uri, t)
                for uri in merged.entities
                for t in range(config.walks_t)
            ]
            path_table = load_embeddings(
                config.path_embeddings, keys, kind="path-sentence", normalize=True
            )
            context = context_embedding(
                merged,
                name_table,
                None,
                walks=config.walks_t,
                steps=config.walks_k,
                seed=config.seed,
                path_table=path_table,
            )
        return names, multiview_concat(names, context).combined


def stage_reconstruct(
    config: PipelineConfig, primal: PrimalGraph, name_features: np.ndarray
) -> reconstruction.ReconstructedTriples:
    """Run the relation-structure reconstruction and write its artifacts."""
    with _stage("reconstruct"):
        result = reconstruction.run_algorithm(
            primal,
            name_features,
            gamma_sim=config.gamma_sim,
            tau_sim=config.tau_sim,
            gamma_r=config.gamma_r,
        )
        g1_new = subgraph_with_triples(primal.kg1, result.t_new_1)
        g2_new = subgraph_with_triples(primal.kg2, result.t_new_2)
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        write_triples(g1_new, config.out("reconstructed_1.tsv"))
        write_triples(g2_new, config.out("reconstructed_2.tsv"))
        write_json(
            config.out("reconstruction_stats.json"),
            result.stats(primal.kg1, primal.kg2),
        )
        return result


def merged_reconstructed(
    primal: PrimalGraph, result: reconstruction.ReconstructedTriples
) -> KnowledgeGraph:
    """Map both filtered triple sets into the merged id space."""
    n1 = primal.kg1.num_entities
    r1 = primal.kg1.num_relations
    triples = set(result.t_new_1)
    triples |= {
        RelationTriple(t.head + n1, t.relation + r1, t.tail + n1)
        for t in result.t_new_2
    }
    return subgraph_with_triples(primal.merged, triples)


def stage_train(
    config: PipelineConfig, graph: KnowledgeGraph, combined: np.ndarray
) -> TrainState:
    """Contrastive training on the reconstructed merged graph."""
    with _stage("train"):
        try:
            state = train(
                graph,
                combined,
                config.train_config(),
                d_model=config.d_model,
                init_rng=substream(config.seed, STREAM_INIT),
            )
        except NumericalError as exc:
            # keep the last good parameters on disk before surfacing
            aborted = getattr(exc, "state", None)
            if aborted is not None:
                save_checkpoint(
                    aborted.online, config.out("checkpoint.json"), seed=config.seed
                )
                write_json(config.out("training_log.json"), aborted.log)
            raise
        save_checkpoint(state.online, config.out("checkpoint.json"), seed=config.seed)
        write_json(config.out("training_log.json"), state.log)
        return state


def stage_align(
    config: PipelineConfig,
    primal: PrimalGraph,
    graph: KnowledgeGraph,
    combined: np.ndarray,
    params: LcatParams,
) -> tuple[np.ndarray, alignment.SimilarityMatrix]:
    """Inference embeddings, full similarity matrix, prediction artifacts.

    Inference uses the online encoder on the unperturbed reconstructed graph.
    """
    with _stage("align"):
        out = forward(params, combined, Neighborhood.from_graph(graph))
        embeddings = out.e_tilde
        n1 = primal.kg1.num_entities

        keys = [f"kg1:{u}" for u in primal.kg1.entities] + [
            f"kg2:{u}" for u in primal.kg2.entities
        ]
        write_embeddings(
            config.out("final_embeddings.tsv"), keys, embeddings, embeddings.shape[1]
        )

        sim = alignment.similarity_matrix(embeddings, n1, block_size=config.block_size)
        pairs = alignment.predict_one_to_one(sim)
        lines = [
            f"{primal.kg1.entities[s]}\t{primal.kg2.entities[t]}"
            f"\t{sim.raw[s, t]!r}\t{sim.adjusted[s, t]!r}"
            for s, t in pairs
        ]
        config.out("predictions.tsv").write_text(
            "".join(l + "\n" for l in lines), encoding="utf-8"
        )
        return embeddings, sim


def split_gold(
    config: PipelineConfig, gold: list[tuple[int, int]]
) -> list[tuple[int, int]]:
    """Deterministic validation/test split of the gold links.

    The links are shuffled under the split sub-stream; the first
    val_fraction are validation, the next test_fraction are test. With
    eval_split="all" every link is evaluated.
    """
    if config.eval_split == "all":
        return list(gold)
    rng = substream(config.seed, STREAM_SPLIT)
    order = rng.permutation(len(gold))
    n_val = int(np.floor(config.val_fraction * len(gold)))
    n_test = int(np.floor(config.test_fraction * len(gold)))
    test_idx = order[n_val : n_val + n_test]
    return [gold[i] for i in test_idx]


def stage_eval(
    config: PipelineConfig,
    primal: PrimalGraph,
    embeddings: np.ndarray,
    sim_full: alignment.SimilarityMatrix | None = None,
) -> dict:
    """Rank candidates and score Hits@k / MRR against the gold links."""
    with _stage("eval"):
        if config.ent_links is None:
            raise ConfigError("evaluation requires ent_links")
        uri_pairs = parse_links(config.ent_links)
        gold: list[tuple[int, int]] = []
        for u1, u2 in uri_pairs:
            if u1 not in primal.kg1.entity_index:
                raise DataError(f"gold entity {u1!r} not in KG1")
            if u2 not in primal.kg2.entity_index:
                raise DataError(f"gold entity {u2!r} not in KG2")
            gold.append((primal.kg1.entity_index[u1], primal.kg2.entity_index[u2]))
        eval_gold = split_gold(config, gold)
        if not eval_gold:
            raise DataError("evaluation split has no gold links")

        n1 = primal.kg1.num_entities
        if config.candidates == "gold":
            targets = sorted({t for _, t in eval_gold})
            remap = {t: i for i, t in enumerate(targets)}
            restricted = np.vstack(
                [embeddings[:n1], embeddings[n1:][targets]]
            )
            sim = alignment.similarity_matrix(restricted, n1, config.block_size)
            eval_pairs = [(s, remap[t]) for s, t in eval_gold]
        else:
            sim = sim_full if sim_full is not None else alignment.similarity_matrix(
                embeddings, n1, config.block_size
            )
            eval_pairs = eval_gold

        rankings = alignment.rank_candidates(sim, config.rank_mode)
        metrics = alignment.evaluate(rankings, eval_pairs)
        metrics["mode"] = {
            "rank": config.rank_mode,
            "candidates": config.candidates,
            "split": config.eval_split,
        }
        write_json(config.out("metrics.json"), metrics)
        return metrics


# ---------------------------------------------------------------------------
# full runs


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute every stage in order and return the metric report."""
    config.validate()
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    write_json(config.out("config_effective.json"), config.to_dict())

    primal = stage_ingest(config)
    names, combined = stage_features(config, primal)
    recon = stage_reconstruct(config, primal, names)
    graph = merged_reconstructed(primal, recon)
    state = stage_train(config, graph, combined)
    embeddings, sim = stage_align(config, primal, graph, combined, state.online)
    return stage_eval(config, primal, embeddings, sim_full=sim)


SWEEP_KNOBS = {
    "perturb1": (0.0, 0.5),
    "tau": (1e-6, 100.0),
    "momentum": (0.0, 1.0 - 1e-12),
}


def sweep(config: PipelineConfig, knob: str, values: list[float]) -> list[dict]:
    """Run the pipeline once per knob value; failures become row markers."""
    if knob not in SWEEP_KNOBS:
        raise ConfigError(f"sweep knob must be one of {sorted(SWEEP_KNOBS)}")
    lo, hi = SWEEP_KNOBS[knob]
    for v in values:
        if not lo <= v <= hi:
            raise ConfigError(f"{knob}={v} outside sweep range [{lo}, {hi}]")

    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    base = config.to_dict()
    for v in values:
        raw = dict(base)
        raw[knob] = v
        raw["output_dir"] = str(Path(config.output_dir) / f"{knob}_{v}")
        try:
            metrics = run_pipeline(PipelineConfig.from_dict(raw))
            rows.append({"knob": knob, "value": v, "status": "ok", **{
                k: metrics[k] for k in ("hits@1", "hits@10", "mrr", "n_eval")
            }})
        except KgAlignError as exc:
            logger.warning("sweep %s=%s failed: %s", knob, v, exc)
            rows.append({"knob": knob, "value": v, "status": f"failed: {exc}"})
    write_json(config.out("sweep.json"), rows)
    return rows
