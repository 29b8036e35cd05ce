"""Candidate scoring, ranking, and evaluation.

The consistency score rewards pairs that are close to being mutual best
matches: d'(s, t) = (row-max + column-max) / 2 - d(s, t). It is zero exactly
when (s, t) maximizes both its row and its column, and smaller is better.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kgalign.errors import ConfigError, DataError

MODE_CONSISTENCY = "consistency"
MODE_COSINE = "cosine"


@dataclass
class SimilarityMatrix:
    """Raw cosine and consistency-adjusted scores for all candidate pairs."""

    raw: np.ndarray  # (n1, n2) cosine
    adjusted: np.ndarray  # (n1, n2) consistency distance, >= 0
    row_max: np.ndarray  # (n1,)
    col_max: np.ndarray  # (n2,)


def similarity_matrix(
    embeddings: np.ndarray, n1: int, block_size: int = 4096
) -> SimilarityMatrix:
    """All-pairs similarity between the first n1 rows and the rest.

    Rows are assumed unit-normalized so the dot product is the cosine.
    The product is computed in row blocks to bound peak memory of the
    intermediate work on large instances.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n2 = embeddings.shape[0] - n1
    if n1 <= 0 or n2 <= 0:
        raise DataError(f"both sides must be non-empty, got {n1} and {n2}")
    left = embeddings[:n1]
    right = embeddings[n1:]

    raw = np.empty((n1, n2))
    for start in range(0, n1, block_size):
        stop = min(start + block_size, n1)
        raw[start:stop] = left[start:stop] @ right.T

    row_max = raw.max(axis=1)
    col_max = raw.max(axis=0)
    adjusted = (row_max[:, None] + col_max[None, :]) / 2.0 - raw
    return SimilarityMatrix(raw=raw, adjusted=adjusted, row_max=row_max, col_max=col_max)


def rank_candidates(sim: SimilarityMatrix, mode: str = MODE_CONSISTENCY) -> np.ndarray:
    """Per-source-entity candidate ordering, best first.

    Consistency mode sorts by ascending adjusted distance, cosine mode by
    descending raw similarity; ties always break toward the smaller target
    id. Returns an (n1, n2) array of target ids.
    """
    if mode == MODE_CONSISTENCY:
        key = sim.adjusted
    elif mode == MODE_COSINE:
        key = -sim.raw
    else:
        raise ConfigError(f"unknown ranking mode {mode!r}")
    # Stable sort on the score alone: equal scores stay in id order.
    return np.argsort(key, axis=1, kind="stable")


def gold_ranks(rankings: np.ndarray, gold: list[tuple[int, int]]) -> np.ndarray:
    """1-based rank of each gold target within its source entity's ranking."""
    n1, n2 = rankings.shape
    # positions[s][t] = index of target t in s's ranking
    positions = np.empty_like(rankings)
    rows = np.arange(n1)[:, None]
    positions[rows, rankings] = np.arange(n2)[None, :]
    ranks = np.empty(len(gold), dtype=np.int64)
    for idx, (s, t) in enumerate(gold):
        if not 0 <= s < n1:
            raise DataError(f"gold source entity {s} has no ranking")
        if not 0 <= t < n2:
            raise DataError(f"gold target entity {t} is not a candidate")
        ranks[idx] = positions[s, t] + 1
    return ranks


def hits_at_k(rankings: np.ndarray, gold: list[tuple[int, int]], k: int) -> float:
    """Fraction of gold pairs whose target ranks within the top k."""
    if not gold:
        raise DataError("empty gold set")
    ranks = gold_ranks(rankings, gold)
    return float(np.mean(ranks <= k))


def mrr(rankings: np.ndarray, gold: list[tuple[int, int]]) -> float:
    """Mean reciprocal rank of the gold targets, ranks starting at 1."""
    if not gold:
        raise DataError("empty gold set")
    ranks = gold_ranks(rankings, gold)
    return float(np.mean(1.0 / ranks))


def predict_one_to_one(sim: SimilarityMatrix) -> list[tuple[int, int]]:
    """Greedy global matching on ascending adjusted distance.

    Ties break by (row, col) id; every source and target is used at most
    once. Evaluation metrics never consult this; it only feeds the
    predictions artifact.
    """
    n1, n2 = sim.adjusted.shape
    order = np.argsort(sim.adjusted, axis=None, kind="stable")
    used_rows = np.zeros(n1, dtype=bool)
    used_cols = np.zeros(n2, dtype=bool)
    pairs: list[tuple[int, int]] = []
    for flat in order:
        s, t = divmod(int(flat), n2)
        if used_rows[s] or used_cols[t]:
            continue
        pairs.append((s, t))
        used_rows[s] = True
        used_cols[t] = True
        if len(pairs) == min(n1, n2):
            break
    return pairs


def evaluate(
    rankings: np.ndarray,
    gold: list[tuple[int, int]],
    ks: tuple[int, ...] = (1, 10),
) -> dict:
    """Hits@k for each k plus MRR, as a JSON-ready dict."""
    metrics = {f"hits@{k}": hits_at_k(rankings, gold, k) for k in ks}
    metrics["mrr"] = mrr(rankings, gold)
    metrics["n_eval"] = len(gold)
    return metrics
