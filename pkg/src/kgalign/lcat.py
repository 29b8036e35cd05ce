"""Learnable graph convolutional-attention layer with exact gradients.

One message-passing layer that interpolates between mean aggregation and
learned attention through bounded scalars: an input projection, a convolved
feature pass, interpolated attention scores, neighborhood aggregation, and a
learned mix of aggregated and projected features. Forward caches every
intermediate so backward can return analytic gradients for all parameters,
verified against finite differences.

All math is 64-bit. The three mixing scalars live as unconstrained logits
and pass through a sigmoid, so they stay inside (0, 1) for any parameter
value an optimizer can reach.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from kgalign.errors import ConfigError, DataError
from kgalign.kg import KnowledgeGraph, neighbors

CHECKPOINT_VERSION = 1

# (lam1, lam2, lam3) = (attention gain, convolution strength, output mix)
LambdaOverride = tuple[float | None, float | None, float | None]
NO_OVERRIDE: LambdaOverride = (None, None, None)


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass
class Neighborhood:
    """CSR view of per-node neighbor sets, self always included.

    ``indices[indptr[i]:indptr[i+1]]`` holds the sorted members of node i's
    closed neighborhood; ``row`` is the flat row index of every slot.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    row: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_graph(cls, g: KnowledgeGraph) -> "Neighborhood":
        lists = [neighbors(g, i, self_loop=True) for i in range(g.num_entities)]
        return cls.from_lists(lists)

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]]) -> "Neighborhood":
        n = len(lists)
        counts = np.array([len(l) for l in lists], dtype=np.intp)
        if n and counts.min() < 1:
            raise DataError("every node needs a non-empty closed neighborhood")
        indptr = np.zeros(n + 1, dtype=np.intp)
        np.cumsum(counts, out=indptr[1:])
        indices = np.concatenate([np.asarray(l, dtype=np.intp) for l in lists]) if n else np.zeros(0, dtype=np.intp)
        row = np.repeat(np.arange(n, dtype=np.intp), counts)
        return cls(n=n, indptr=indptr, indices=indices, row=row, counts=counts)

    def segment_sum(self, edge_values: np.ndarray) -> np.ndarray:
        """Sum edge-aligned values per row."""
        if self.n == 0:
            return np.zeros((0,) + edge_values.shape[1:])
        return np.add.reduceat(edge_values, self.indptr[:-1], axis=0)

    def segment_max(self, edge_values: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return np.maximum.reduceat(edge_values, self.indptr[:-1])


@dataclass
class LcatParams:
    """All trainable tensors of the layer, for one encoder copy.

    ``lam_logits`` holds the three unconstrained scalars behind the sigmoid-
    bounded mixing coefficients.
    """

    mlp_w: np.ndarray  # (d_in, d_model)
    mlp_b: np.ndarray  # (d_model,)
    w1: np.ndarray  # (d_model, d_out)
    w2: np.ndarray  # (d_model, d_out)
    att: np.ndarray  # (2 * d_out,)
    lam_logits: np.ndarray  # (3,)

    TENSOR_NAMES = ("mlp_w", "mlp_b", "w1", "w2", "att", "lam_logits")

    @property
    def d_in(self) -> int:
        return self.mlp_w.shape[0]

    @property
    def d_model(self) -> int:
        return self.mlp_w.shape[1]

    @property
    def d_out(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(
        cls, d_in: int, d_model: int, rng: np.random.Generator, d_out: int | None = None
    ) -> "LcatParams":
        """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, zero bias.

        The output mix adds aggregated features to the projected input, so
        d_out must equal d_model.
        """
        if d_out is None:
            d_out = d_model
        if d_out != d_model:
            raise ConfigError(
                f"output mix needs d_out == d_model, got {d_out} != {d_model}"
            )

        def uniform(fan_in: int, *shape: int) -> np.ndarray:
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            mlp_w=uniform(d_in, d_in, d_model),
            mlp_b=np.zeros(d_model),
            w1=uniform(d_model, d_model, d_out),
            w2=uniform(d_model, d_model, d_out),
            att=uniform(2 * d_out, 2 * d_out),
            lam_logits=np.zeros(3),  # lambdas start at 0.5
        )

    def lambdas(self, override: LambdaOverride = NO_OVERRIDE) -> tuple[float, float, float]:
        raw = sigmoid(self.lam_logits)
        return tuple(
            float(raw[k]) if override[k] is None else float(override[k])
            for k in range(3)
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    def clone(self) -> "LcatParams":
        return LcatParams(**{k: v.copy() for k, v in self.tensors().items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors().values())


def zero_grads(params: LcatParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(v) for name, v in params.tensors().items()}


def save_checkpoint(params: LcatParams, path: str | Path, seed: int | None = None) -> None:
    """Write all tensors plus shapes to a versioned JSON checkpoint."""
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in params.tensors().items()},
        "tensors": {k: v.tolist() for k, v in params.tensors().items()},
        "seed": seed,
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True), encoding="utf-8")


def load_checkpoint(
    path: str | Path, expect_shapes: Mapping[str, tuple[int, ...]] | None = None
) -> tuple[LcatParams, int | None]:
    """Load a checkpoint, rejecting version or shape mismatches."""
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint version {blob.get('format_version')} != {CHECKPOINT_VERSION}"
        )
    tensors = {}
    for name in LcatParams.TENSOR_NAMES:
        arr = np.asarray(blob["tensors"][name], dtype=np.float64)
        declared = tuple(blob["shapes"][name])
        if arr.shape != declared:
            raise DataError(f"checkpoint tensor {name}: shape {arr.shape} != declared {declared}")
        if expect_shapes is not None and arr.shape != tuple(expect_shapes[name]):
            raise DataError(
                f"checkpoint tensor {name}: shape {arr.shape} != expected {tuple(expect_shapes[name])}"
            )
        tensors[name] = arr
    return LcatParams(**tensors), blob.get("seed")


def mlp_forward(params: LcatParams, features: np.ndarray) -> np.ndarray:
    """Single affine input projection, no nonlinearity."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != params.d_in:
        raise ConfigError(
            f"feature dim {features.shape[1]} != projection input dim {params.d_in}"
        )
    return features @ params.mlp_w + params.mlp_b


def convolve(e: np.ndarray, neigh: Neighborhood, lam2: float) -> np.ndarray:
    """Blend each node with its closed-neighborhood sum, weight lam2."""
    s = neigh.segment_sum(e[neigh.indices])
    denom = 1.0 + lam2 * neigh.counts
    return (e + lam2 * s) / denom[:, None]


def attention_scores(
    e_conv: np.ndarray,
    neigh: Neighborhood,
    lam1: float,
    w2: np.ndarray,
    att: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Raw pre-softmax scores per neighborhood slot.

    Score of slot (i, j) is lam1 * (a_src . W2 e'_i + a_dst . W2 e'_j); the
    additive split lets the pairwise score decompose into per-node terms.
    Returns (scores, source terms, destination terms, projected features).
    """
    d_out = w2.shape[1]
    z = e_conv @ w2
    s_src = z @ att[:d_out]
    s_dst = z @ att[d_out:]
    psi = lam1 * (s_src[neigh.row] + s_dst[neigh.indices])
    return psi, s_src, s_dst, z


def attention_softmax(psi: np.ndarray, neigh: Neighborhood) -> np.ndarray:
    """Max-shifted softmax over each neighborhood; rows sum to 1."""
    shift = neigh.segment_max(psi)
    exp = np.exp(psi - shift[neigh.row])
    total = neigh.segment_sum(exp)
    return exp / total[neigh.row]


def attention(
    e_conv: np.ndarray,
    neigh: Neighborhood,
    lam1: float,
    w2: np.ndarray,
    att: np.ndarray,
) -> np.ndarray:
    """Attention coefficients aligned with ``neigh.indices``."""
    psi, _, _, _ = attention_scores(e_conv, neigh, lam1, w2, att)
    return attention_softmax(psi, neigh)


def aggregate(
    e: np.ndarray, alpha: np.ndarray, neigh: Neighborhood, w1: np.ndarray
) -> np.ndarray:
    """Attention-weighted neighborhood sum of W1-projected features.

    W1 applies to the projected input e, not the convolved pass.
    """
    h = e @ w1
    return neigh.segment_sum(alpha[:, None] * h[neigh.indices])


def mix_output(
    e_agg: np.ndarray, e: np.ndarray, lam3: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convex mix of aggregated and projected features, then row-normalize.

    Returns (pre-norm mix, unit-norm output, row norms).
    """
    if e_agg.shape != e.shape:
        raise ConfigError(
            f"aggregated shape {e_agg.shape} incompatible with projected shape {e.shape}"
        )
    y = lam3 * e_agg + (1.0 - lam3) * e
    norms = np.linalg.norm(y, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return y, y / safe[:, None], norms


@dataclass
class EncoderOutput:
    """Forward result plus every intermediate backward needs."""

    e_tilde: np.ndarray
    features: np.ndarray
    neigh: Neighborhood
    e: np.ndarray
    conv_sum: np.ndarray
    e_conv: np.ndarray
    z: np.ndarray
    s_src: np.ndarray
    s_dst: np.ndarray
    alpha: np.ndarray
    h: np.ndarray
    e_agg: np.ndarray
    y: np.ndarray
    norms: np.ndarray
    lambdas: tuple[float, float, float]
    override: LambdaOverride


def forward(
    params: LcatParams,
    features: np.ndarray,
    neigh: Neighborhood,
    lam_override: LambdaOverride = NO_OVERRIDE,
) -> EncoderOutput:
    """Full layer forward pass over one graph view."""
    lam1, lam2, lam3 = params.lambdas(lam_override)
    features = np.asarray(features, dtype=np.float64)

    e = mlp_forward(params, features)
    conv_sum = neigh.segment_sum(e[neigh.indices])
    denom = 1.0 + lam2 * neigh.counts
    e_conv = (e + lam2 * conv_sum) / denom[:, None]

    psi, s_src, s_dst, z = attention_scores(e_conv, neigh, lam1, params.w2, params.att)
    alpha = attention_softmax(psi, neigh)

    h = e @ params.w1
    e_agg = neigh.segment_sum(alpha[:, None] * h[neigh.indices])

    y, e_tilde, norms = mix_output(e_agg, e, lam3)
    return EncoderOutput(
        e_tilde=e_tilde,
        features=features,
        neigh=neigh,
        e=e,
        conv_sum=conv_sum,
        e_conv=e_conv,
        z=z,
        s_src=s_src,
        s_dst=s_dst,
        alpha=alpha,
        h=h,
        e_agg=e_agg,
        y=y,
        norms=norms,
        lambdas=(lam1, lam2, lam3),
        override=lam_override,
    )


def backward(
    params: LcatParams, out: EncoderOutput, grad_output: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact gradients of the forward pass for every parameter tensor.

    ``grad_output`` is the loss gradient with respect to the unit-normalized
    output rows. Overridden lambdas receive zero logit gradient.
    """
    neigh = out.neigh
    lam1, lam2, lam3 = out.lambdas
    d_out = params.d_out
    row, col = neigh.row, neigh.indices

    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != out.e_tilde.shape:
        raise ConfigError(
            f"gradient shape {grad_output.shape} != output shape {out.e_tilde.shape}"
        )

    # Row normalization: y -> y / ||y||.
    safe = np.where(out.norms == 0.0, 1.0, out.norms)
    inner = np.sum(out.e_tilde * grad_output, axis=1, keepdims=True)
    d_y = (grad_output - out.e_tilde * inner) / safe[:, None]

    # Output mix.
    d_e_agg = lam3 * d_y
    d_e = (1.0 - lam3) * d_y
    d_lam3 = float(np.sum((out.e_agg - out.e) * d_y))

    # Aggregation: E_agg[i] = sum_j alpha_ij * H[j].
    d_alpha = np.sum(d_e_agg[row] * out.h[col], axis=1)
    d_h = np.zeros_like(out.h)
    np.add.at(d_h, col, out.alpha[:, None] * d_e_agg[row])
    d_w1 = out.e.T @ d_h
    d_e += d_h @ params.w1.T

    # Softmax: d_psi = alpha * (d_alpha - sum_row(alpha * d_alpha)).
    weighted = neigh.segment_sum(out.alpha * d_alpha)
    d_psi = out.alpha * (d_alpha - weighted[row])

    # Scores: psi = lam1 * (s_src[i] + s_dst[j]).
    d_lam1 = float(np.sum(d_psi * (out.s_src[row] + out.s_dst[col])))
    d_s_src = lam1 * neigh.segment_sum(d_psi)
    d_s_dst = np.zeros(neigh.n)
    np.add.at(d_s_dst, col, lam1 * d_psi)

    # Projected score terms: s_src = Z a_src, s_dst = Z a_dst.
    a_src, a_dst = params.att[:d_out], params.att[d_out:]
    d_z = d_s_src[:, None] * a_src[None, :] + d_s_dst[:, None] * a_dst[None, :]
    d_att = np.concatenate([out.z.T @ d_s_src, out.z.T @ d_s_dst])
    d_w2 = out.e_conv.T @ d_z
    d_e_conv = d_z @ params.w2.T

    # Convolution: e'_i = (e_i + lam2 * S_i) / (1 + lam2 * c_i).
    denom = 1.0 + lam2 * neigh.counts
    direct = d_e_conv / denom[:, None]
    d_e += direct
    np.add.at(d_e, col, lam2 * direct[row])
    d_lam2 = float(
        np.sum(
            d_e_conv
            * (out.conv_sum - neigh.counts[:, None] * out.e)
            / (denom**2)[:, None]
        )
    )

    # Input projection.
    d_mlp_w = out.features.T @ d_e
    d_mlp_b = d_e.sum(axis=0)

    # Sigmoid reparameterization; overridden lambdas are constants.
    d_logits = np.zeros(3)
    for k, d_lam in enumerate((d_lam1, d_lam2, d_lam3)):
        if out.override[k] is None:
            lam = out.lambdas[k]
            d_logits[k] = d_lam * lam * (1.0 - lam)

    return {
        "mlp_w": d_mlp_w,
        "mlp_b": d_mlp_b,
        "w1": d_w1,
        "w2": d_w2,
        "att": d_att,
        "lam_logits": d_logits,
    }
