"""Text encoder backends.

The default backend wraps a pretrained multilingual sentence-transformer
(LaBSE). The ``hash:`` backend produces deterministic pseudo-random vectors
from a digest of the text; it exists for offline testing of the file
contract and has no semantic content.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_MODEL = "sentence-transformers/LaBSE"
HASH_SCHEME = "hash:"


class ModelLoadError(RuntimeError):
    """The requested encoder model could not be obtained."""


class HashEncoder:
    """Deterministic stand-in encoder: digest-seeded unit vectors.

    Identical texts map to identical vectors; there is no notion of
    similarity beyond equality.
    """

    def __init__(self, dim: int = 768):
        if dim < 1:
            raise ModelLoadError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim
        self.revision = "0"

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            out[i] = rng.standard_normal(self.dim)
        return out


class SentenceTransformerEncoder:
    """Pretrained sentence-transformer backend, loaded lazily."""

    def __init__(self, model_id: str = DEFAULT_MODEL):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(
                f"sentence-transformers is not installed (needed for {model_id})"
            ) from exc
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load model {model_id}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())
        revision = getattr(self._model, "_model_config", {}).get("__version__", None)
        self.revision = str(revision) if revision else "unknown"

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        # normalization is handled by the caller so --no-normalize works
        return np.asarray(
            self._model.encode(
                texts,
                batch_size=batch_size,
                convert_to_numpy=True,
                normalize_embeddings=False,
                show_progress_bar=False,
            ),
            dtype=np.float64,
        )


def build_encoder(model_id: str):
    """Instantiate the backend named by a model identifier."""
    if model_id.startswith(HASH_SCHEME):
        try:
            dim = int(model_id[len(HASH_SCHEME) :])
        except ValueError as exc:
            raise ModelLoadError(f"bad hash encoder id {model_id!r}, want hash:<dim>") from exc
        return HashEncoder(dim)
    return SentenceTransformerEncoder(model_id)
