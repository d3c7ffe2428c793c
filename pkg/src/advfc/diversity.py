"""Text embeddings and the batch diversity regularizer."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .remote import Endpoint, MalformedPayload, embeddings

DEFAULT_DIM = 256
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    norm: float

    @classmethod
    def of(cls, values) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=float)
        arr.setflags(write=False)
        return cls(arr, float(np.linalg.norm(arr)))


@lru_cache(maxsize=65536)
def _hashed_ngrams(text: str, dim: int) -> tuple[float, ...]:
    padded = f"<{text}>"
    vec = np.zeros(dim)
    for n in (2, 3):
        for i in range(len(padded) - n + 1):
            gram = padded[i : i + n].encode("utf-8")
            h = int.from_bytes(hashlib.blake2b(gram, digest_size=8).digest(), "little")
            vec[h % dim] += 1.0
    vec /= np.linalg.norm(vec)
    return tuple(vec)


def embed(text: str, dim: int = DEFAULT_DIM) -> EmbeddingVector:
    """Hashed character 2/3-gram bag, L2-normalized."""
    if not text:
        raise ValueError("cannot embed empty text")
    return EmbeddingVector.of(_hashed_ngrams(text, dim))


class RemoteEmbedder:
    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint

    def __call__(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        out = [EmbeddingVector.of(v) for v in embeddings(self.endpoint, list(texts))]
        if any(e.norm == 0 for e in out):
            raise MalformedPayload("remote embedder returned a zero vector", url=self.endpoint.url, attempts=1)
        return out


def embed_batch(texts: Sequence[str], dim: int = DEFAULT_DIM) -> list[EmbeddingVector]:
    return [embed(t, dim) for t in texts]


def _cosine_distances(embeddings: Sequence[EmbeddingVector]) -> np.ndarray:
    mat = np.stack([e.values / e.norm for e in embeddings])
    cos = np.clip(mat @ mat.T, -1.0, 1.0)
    return 1.0 - cos


@dataclass(frozen=True)
class DiversityReport:
    batch_size: int
    mean_pairwise_distance: float
    bonus: float


def batch_diversity(embeddings: Sequence[EmbeddingVector], alpha: float = DEFAULT_ALPHA) -> DiversityReport:
    """``alpha`` times the mean of ``1 - cos(v_i, v_j)`` over unordered pairs."""
    b = len(embeddings)
    if b < 2:
        raise ValueError("diversity needs at least two embeddings")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    dist = _cosine_distances(embeddings)
    total = 0.0
    for i in range(b):
        for j in range(i + 1, b):
            total += dist[i, j]
    mean = 2.0 * total / (b * (b - 1))
    return DiversityReport(b, mean, alpha * mean)


def per_sample_diversity_bonuses(embeddings: Sequence[EmbeddingVector], alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Per-sample share of the batch bonus; the shares average to the batch bonus."""
    b = len(embeddings)
    if b < 2:
        raise ValueError("diversity needs at least two embeddings")
    dist = _cosine_distances(embeddings)
    np.fill_diagonal(dist, 0.0)
    return alpha * dist.sum(axis=1) / (b - 1)


def per_sample_diversity_bonus(embeddings: Sequence[EmbeddingVector], index: int, alpha: float = DEFAULT_ALPHA) -> float:
    if not 0 <= index < len(embeddings):
        raise IndexError(f"index {index} outside batch of {len(embeddings)}")
    return float(per_sample_diversity_bonuses(embeddings, alpha)[index])
