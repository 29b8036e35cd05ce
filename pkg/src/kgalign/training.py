"""Label-free contrastive training of the encoder.

Each epoch: sample two perturbed graph views, encode view one with the
online encoder and view two with a slowly moving momentum copy, pull each
entity's two embeddings together against in-batch negatives (InfoNCE),
take one Adam step on the online parameters, then EMA-update the copy.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from kgalign.errors import ConfigError, NumericalError
from kgalign.kg import KnowledgeGraph, subgraph_with_triples
from kgalign.lcat import LcatParams, Neighborhood, backward, forward, zero_grads
from kgalign.seeding import STREAM_AUGMENT, STREAM_BATCH, substream

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Contrastive training hyperparameters."""

    perturb1: float = 0.2  # edge-drop ratio for the online view
    perturb2: float = 0.3  # edge-drop ratio for the momentum view
    tau: float = 0.08  # InfoNCE temperature
    momentum: float = 0.999  # EMA coefficient of the target copy
    batch_size: int = 1024
    epochs: int = 800
    learning_rate: float = 1e-3
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.perturb1 <= 1.0 or not 0.0 <= self.perturb2 <= 1.0:
            raise ConfigError("perturb ratios must lie in [0, 1]")
        if self.tau <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.tau}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be > 0")


@dataclass
class AdamState:
    """First/second moments per tensor plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: LcatParams) -> "AdamState":
        return cls(m=zero_grads(params), v=zero_grads(params))


@dataclass
class TrainState:
    """Everything the training loop mutates."""

    online: LcatParams
    momentum_copy: LcatParams
    adam: AdamState
    epoch_losses: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)


def augment_graph(
    g: KnowledgeGraph, ratio: float, rng: np.random.Generator
) -> KnowledgeGraph:
    """Graph view with floor(ratio * |T|) triples dropped uniformly.

    The entity set is unchanged; nodes that lose all edges keep their
    self-slot in downstream neighborhoods.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"perturb ratio must lie in [0, 1], got {ratio}")
    ordered = sorted(g.triples, key=lambda t: (t.head, t.relation, t.tail))
    n_drop = int(np.floor(ratio * len(ordered)))
    if n_drop == 0:
        return subgraph_with_triples(g, ordered)
    dropped = set(rng.choice(len(ordered), size=n_drop, replace=False).tolist())
    kept = [t for i, t in enumerate(ordered) if i not in dropped]
    return subgraph_with_triples(g, kept)


def infonce_loss(
    u: np.ndarray, v: np.ndarray, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Two-view InfoNCE over row-aligned embeddings.

    Row i of each matrix is the same entity in the two views. For entity i
    the positive is (u_i, v_i); negatives are both cross-view pairings with
    every other in-batch entity. Returns the summed loss and its analytic
    gradients with respect to u and v, computed with log-sum-exp shifts.
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ConfigError(f"view shapes differ: {u.shape} vs {v.shape}")
    n = u.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(u), np.zeros_like(v)

    scores = (u @ v.T) / tau  # scores[i, k] = u_i . v_k / tau

    # Denominator of entity i pools row i, plus column i without its
    # diagonal: log D_i = LSE(scores[i, :] ++ scores[k != i, i]).
    col_no_diag = scores.T.copy()
    np.fill_diagonal(col_no_diag, -np.inf)
    pooled = np.concatenate([scores, col_no_diag], axis=1)
    shift = pooled.max(axis=1)
    log_denom = shift + np.log(np.exp(pooled - shift[:, None]).sum(axis=1))

    loss = float(np.sum(log_denom - np.diag(scores)))

    # d loss / d scores[a, b] = -delta_ab + exp(scores[a,b] - logD_a)
    #                           + [a != b] * exp(scores[a,b] - logD_b)
    p_row = np.exp(scores - log_denom[:, None])
    p_col = np.exp(scores - log_denom[None, :])
    np.fill_diagonal(p_col, 0.0)
    d_scores = p_row + p_col
    d_scores[np.diag_indices(n)] -= 1.0

    d_u = (d_scores @ v) / tau
    d_v = (d_scores.T @ u) / tau
    return loss, d_u, d_v


def momentum_update(online: LcatParams, momentum_copy: LcatParams, m: float) -> None:
    """EMA update, in place: every copy tensor <- m * copy + (1 - m) * online."""
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"momentum must lie in [0, 1], got {m}")
    for name, src in online.tensors().items():
        dst = getattr(momentum_copy, name)
        if dst.shape != src.shape:
            raise ConfigError(
                f"momentum tensor {name}: shape {dst.shape} != online {src.shape}"
            )
        np.multiply(dst, m, out=dst)
        dst += (1.0 - m) * src


def adam_step(
    params: LcatParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Standard Adam update with bias correction, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in tensor {name}")
    state.step += 1
    t = state.step
    for name in LcatParams.TENSOR_NAMES:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        tensor = getattr(params, name)
        tensor -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train(
    graph: KnowledgeGraph,
    features: np.ndarray,
    config: TrainConfig,
    d_model: int,
    init_rng: np.random.Generator,
    on_epoch: Callable[[int, TrainState], None] | None = None,
) -> TrainState:
    """Run the full contrastive loop on one (reconstructed) graph.

    Only the online encoder receives gradients; the momentum copy changes
    exclusively through the EMA update. Aborts with the state so far when
    the loss goes non-finite.
    """
    config.validate()
    features = np.asarray(features, dtype=np.float64)
    n = graph.num_entities
    if features.shape[0] != n:
        raise ConfigError(
            f"feature rows {features.shape[0]} != entity count {n}"
        )

    online = LcatParams.init(features.shape[1], d_model, init_rng)
    state = TrainState(
        online=online,
        momentum_copy=online.clone(),
        adam=AdamState.for_params(online),
    )

    aug_rng = substream(config.seed, STREAM_AUGMENT)
    batch_rng = substream(config.seed, STREAM_BATCH)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        view1 = Neighborhood.from_graph(augment_graph(graph, config.perturb1, aug_rng))
        view2 = Neighborhood.from_graph(augment_graph(graph, config.perturb2, aug_rng))

        out_online = forward(state.online, features, view1)
        out_momentum = forward(state.momentum_copy, features, view2)

        order = batch_rng.permutation(n)
        total_loss = 0.0
        grad_out = np.zeros_like(out_online.e_tilde)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, d_u, _d_v = infonce_loss(
                out_online.e_tilde[batch], out_momentum.e_tilde[batch], config.tau
            )
            total_loss += loss
            grad_out[batch] += d_u  # momentum branch is gradient-stopped

        if not np.isfinite(total_loss):
            exc = NumericalError(
                f"epoch {epoch}: non-finite loss {total_loss}; aborting with last state"
            )
            exc.state = state  # callers checkpoint the last good parameters
            raise exc

        grads = backward(state.online, out_online, grad_out)
        adam_step(state.online, grads, state.adam, config.learning_rate)
        momentum_update(state.online, state.momentum_copy, config.momentum)

        mean_loss = total_loss / n
        lam1, lam2, lam3 = state.online.lambdas()
        state.epoch_losses.append(mean_loss)
        state.log.append(
            {
                "epoch": epoch,
                "loss": mean_loss,
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
                "lambda1": lam1,
                "lambda2": lam2,
                "lambda3": lam3,
            }
        )
        if on_epoch is not None:
            on_epoch(epoch, state)
    return state
