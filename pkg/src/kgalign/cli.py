"""Command-line surface.

Subcommands mirror the pipeline stages (ingest, walks-export, reconstruct,
train, align, eval) plus synth, sweep, and run. Each stage reads the
previous stage's files from the output directory, so stages can be rerun
independently. Exit codes: 0 success, 1 usage or config error, 2 data
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from kgalign import pipeline
from kgalign.errors import ConfigError, DataError, NumericalError
from kgalign.features import load_embeddings
from kgalign.kg import KnowledgeGraph, RelationTriple, parse_triples
from kgalign.lcat import load_checkpoint
from kgalign.pipeline import PipelineConfig
from kgalign.synth import SyntheticSpec, generate_synthetic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message: str) -> None:  # noqa: D401 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Flags that override PipelineConfig keys (flag dest -> config key).
_OVERRIDES = {
    "seed": "seed",
    "out": "output_dir",
    "triples_1": "triples_1",
    "triples_2": "triples_2",
    "embeddings": "embeddings",
    "relation_embeddings": "relation_embeddings",
    "path_embeddings": "path_embeddings",
    "ent_links": "ent_links",
    "gamma_sim": "gamma_sim",
    "tau_sim": "tau_sim",
    "gamma_r": "gamma_r",
    "tau": "tau",
    "momentum": "momentum",
    "epochs": "epochs",
    "batch": "batch_size",
    "perturb1": "perturb1",
    "perturb2": "perturb2",
    "walks_k": "walks_k",
    "walks_t": "walks_t",
    "d_model": "d_model",
    "d_out": "d_out",
    "lr": "learning_rate",
    "rank_mode": "rank_mode",
    "context_mode": "context_mode",
    "candidates": "candidates",
    "eval_split": "eval_split",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--triples-1", dest="triples_1", type=str, default=None)
    p.add_argument("--triples-2", dest="triples_2", type=str, default=None)
    p.add_argument("--embeddings", type=str, default=None)
    p.add_argument("--relation-embeddings", dest="relation_embeddings", type=str, default=None)
    p.add_argument("--path-embeddings", dest="path_embeddings", type=str, default=None)
    p.add_argument("--ent-links", dest="ent_links", type=str, default=None)
    p.add_argument("--gamma-sim", dest="gamma_sim", type=float, default=None)
    p.add_argument("--tau-sim", dest="tau_sim", type=float, default=None)
    p.add_argument("--gamma-r", dest="gamma_r", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--perturb1", type=float, default=None)
    p.add_argument("--perturb2", type=float, default=None)
    p.add_argument("--walks-k", dest="walks_k", type=int, default=None)
    p.add_argument("--walks-t", dest="walks_t", type=int, default=None)
    p.add_argument("--d-model", dest="d_model", type=int, default=None)
    p.add_argument("--d-out", dest="d_out", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--rank-mode", dest="rank_mode", choices=pipeline.RANK_MODES, default=None)
    p.add_argument("--context-mode", dest="context_mode", choices=pipeline.CONTEXT_MODES, default=None)
    p.add_argument("--candidates", choices=pipeline.CANDIDATE_SPACES, default=None)
    p.add_argument("--eval-split", dest="eval_split", choices=pipeline.EVAL_SPLITS, default=None)


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    raw = {}
    if args.config is not None:
        raw = PipelineConfig.from_file(args.config).to_dict()
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            raw[key] = value
    return PipelineConfig.from_dict(raw)


def _read_reconstructed(config: PipelineConfig, g: KnowledgeGraph, name: str) -> set[RelationTriple]:
    """Re-intern a reconstructed triple file under the source graph's ids."""
    path = config.out(name)
    if not path.exists():
        raise DataError(f"missing {path}; run the reconstruct stage first")
    parsed = parse_triples(path, g.name)
    triples: set[RelationTriple] = set()
    for t in parsed.triples:
        h_uri = parsed.entities[t.head]
        r_uri = parsed.relations[t.relation]
        t_uri = parsed.entities[t.tail]
        for uri, index in ((h_uri, g.entity_index), (r_uri, g.relation_index), (t_uri, g.entity_index)):
            if uri not in index:
                raise DataError(f"{path}: {uri!r} is not part of graph {g.name}")
        triples.add(
            RelationTriple(g.entity_index[h_uri], g.relation_index[r_uri], g.entity_index[t_uri])
        )
    return triples


def _load_reconstructed_graph(config: PipelineConfig, primal) -> KnowledgeGraph:
    from kgalign.reconstruction import AlignedRelationSet, PseudoLabelSet, ReconstructedTriples

    t1 = _read_reconstructed(config, primal.kg1, "reconstructed_1.tsv")
    t2 = _read_reconstructed(config, primal.kg2, "reconstructed_2.tsv")
    dummy = ReconstructedTriples(
        t_new_1=t1,
        t_new_2=t2,
        filtered_1=t1,
        filtered_2=t2,
        fallback_1=False,
        fallback_2=False,
        pseudo_labels=PseudoLabelSet(pairs=set()),
        relations=AlignedRelationSet(pairs=set()),
    )
    return pipeline.merged_reconstructed(primal, dummy)


def _load_final_embeddings(config: PipelineConfig, primal) -> np.ndarray:
    keys = [f"kg1:{u}" for u in primal.kg1.entities] + [
        f"kg2:{u}" for u in primal.kg2.entities
    ]
    table = load_embeddings(
        config.out("final_embeddings.tsv"), keys, kind="entity-name", normalize=False
    )
    return table.vectors


def _cmd_ingest(config: PipelineConfig) -> int:
    pipeline.stage_ingest(config)
    print(f"wrote normalized triples to {config.output_dir}")
    return EXIT_OK


def _cmd_walks_export(config: PipelineConfig) -> int:
    primal = pipeline.stage_ingest(config)
    path = pipeline.stage_walk_export(config, primal)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_reconstruct(config: PipelineConfig) -> int:
    primal = pipeline.stage_ingest(config)
    names, _ = pipeline.stage_features(config, primal)
    result = pipeline.stage_reconstruct(config, primal, names)
    print(json.dumps(result.stats(primal.kg1, primal.kg2), sort_keys=True))
    return EXIT_OK


def _cmd_train(config: PipelineConfig) -> int:
    primal = pipeline.stage_ingest(config)
    _, combined = pipeline.stage_features(config, primal)
    graph = _load_reconstructed_graph(config, primal)
    state = pipeline.stage_train(config, graph, combined)
    final = state.epoch_losses[-1] if state.epoch_losses else float("nan")
    print(f"trained {config.epochs} epoch(s); final mean loss {final}")
    return EXIT_OK


def _cmd_align(config: PipelineConfig) -> int:
    primal = pipeline.stage_ingest(config)
    _, combined = pipeline.stage_features(config, primal)
    graph = _load_reconstructed_graph(config, primal)
    params, _seed = load_checkpoint(config.out("checkpoint.json"))
    pipeline.stage_align(config, primal, graph, combined, params)
    print(f"wrote {config.out('predictions.tsv')}")
    return EXIT_OK


def _cmd_eval(config: PipelineConfig) -> int:
    primal = pipeline.stage_ingest(config)
    embeddings = _load_final_embeddings(config, primal)
    metrics = pipeline.stage_eval(config, primal, embeddings)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _cmd_run(config: PipelineConfig) -> int:
    metrics = pipeline.run_pipeline(config)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        n_entities=args.n,
        n_relations=args.relations,
        edge_factor=args.edge_factor,
        edge_noise=args.edge_noise,
        feature_dim=args.dim,
        feature_noise=args.sigma,
        seed=args.seed if args.seed is not None else 0,
    )
    paths = generate_synthetic(spec, args.out if args.out else "synth")
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(config: PipelineConfig, args: argparse.Namespace) -> int:
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = pipeline.sweep(config, args.knob, values)
    print(json.dumps(rows, sort_keys=True))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="kgalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("ingest", "parse and normalize the two triple files"),
        ("walks-export", "emit walk sentences for external sentence embedding"),
        ("reconstruct", "mine pseudo-labels and filter the relation structure"),
        ("train", "contrastive training on the reconstructed graph"),
        ("align", "encode entities and write one-to-one predictions"),
        ("eval", "score rankings against the gold links"),
        ("run", "full pipeline end to end"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark instance")
    p_synth.add_argument("--n", type=int, default=200)
    p_synth.add_argument("--relations", type=int, default=10)
    p_synth.add_argument("--edge-factor", dest="edge_factor", type=float, default=3.0)
    p_synth.add_argument("--edge-noise", dest="edge_noise", type=float, default=0.1)
    p_synth.add_argument("--dim", type=int, default=32)
    p_synth.add_argument("--sigma", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", type=str, default="synth")

    p_sweep = sub.add_parser("sweep", help="run the pipeline across one knob's values")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--knob", choices=sorted(pipeline.SWEEP_KNOBS), required=True)
    p_sweep.add_argument("--values", type=str, required=True, help="comma-separated values")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == "synth":
            return _cmd_synth(args)
        config = _build_config(args)
        if args.command == "ingest":
            return _cmd_ingest(config)
        if args.command == "walks-export":
            return _cmd_walks_export(config)
        if args.command == "reconstruct":
            return _cmd_reconstruct(config)
        if args.command == "train":
            return _cmd_train(config)
        if args.command == "align":
            return _cmd_align(config)
        if args.command == "eval":
            return _cmd_eval(config)
        if args.command == "sweep":
            return _cmd_sweep(config, args)
        if args.command == "run":
            return _cmd_run(config)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
