"""Random-exemplar vocabularies and Gaussian soft assignment."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

log = logging.getLogger(__name__)

VOCAB_MAGIC = b"SSPMVC01"
_HEADER = struct.Struct("<IIQd")


@dataclass(frozen=True, eq=False)
class Vocabulary:
    words: np.ndarray  # (N, dim) float32
    seed: int
    sigma: float

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.float32)
        if words.ndim != 2 or len(words) < 1:
            raise ValueError("a vocabulary needs at least one word")
        object.__setattr__(self, "words", words)

    @property
    def size(self) -> int:
        return self.words.shape[0]

    @property
    def dim(self) -> int:
        return self.words.shape[1]

    def with_sigma(self, sigma: float) -> "Vocabulary":
        return Vocabulary(self.words, self.seed, float(sigma))

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(self.dim, self.size, self.seed & 0xFFFFFFFFFFFFFFFF, float(self.sigma))
        return VOCAB_MAGIC + head + self.words.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Vocabulary":
        if data[:8] != VOCAB_MAGIC:
            raise ValueError("not a vocabulary file (bad magic)")
        dim, n, seed, sigma = _HEADER.unpack_from(data, 8)
        start = 8 + _HEADER.size
        expected = start + 4 * dim * n
        if len(data) != expected:
            raise ValueError(f"vocabulary payload is {len(data)} bytes, expected {expected}")
        words = np.frombuffer(data, dtype="<f4", offset=start).reshape(n, dim)
        return cls(words.astype(np.float32), seed, sigma)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_bytes(Path(path).read_bytes())


def sample_vocabulary(pool, n_words: int, seed: int, sigma: float = 1.0) -> Vocabulary:
    """Pick ``n_words`` distinct rows of ``pool`` uniformly at random."""
    pool = np.asarray(pool)
    if n_words < 1:
        raise ValueError(f"vocabulary size must be >= 1, got {n_words}")
    if n_words > len(pool):
        raise ValueError(f"cannot sample {n_words} words from a pool of {len(pool)} descriptors")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=n_words, replace=False)
    return Vocabulary(pool[idx], seed, sigma)


def median_distance(pool, seed: int, n_sample: int = 1000) -> float:
    """Median pairwise Euclidean distance among up to ``n_sample`` random rows."""
    pool = np.asarray(pool, dtype=np.float64)
    if len(pool) < 2:
        raise ValueError("need at least two descriptors to estimate a bandwidth")
    rng = np.random.default_rng(seed)
    if len(pool) > n_sample:
        pool = pool[np.sort(rng.choice(len(pool), size=n_sample, replace=False))]
    med = float(np.median(pdist(pool)))
    if med <= 0.0:
        log.warning("median descriptor distance is zero; falling back to sigma=1")
        return 1.0
    return med


def soft_assign(descriptors, vocab: Vocabulary, sigma: float | None = None) -> np.ndarray:
    """Gaussian-kernel codeword weights, normalized per descriptor.

    Accepts one descriptor or an ``(n, dim)`` batch and returns weights of
    matching rank. The smallest squared distance is subtracted before
    exponentiating, so far-away descriptors still get finite weights.
    """
    sigma = vocab.sigma if sigma is None else sigma
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = np.asarray(descriptors, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    if d.shape[1] != vocab.dim:
        raise ValueError(f"descriptor dimension {d.shape[1]} does not match vocabulary dimension {vocab.dim}")
    if len(d) == 0:
        return np.empty((0, vocab.size))
    sq = cdist(d, vocab.words.astype(np.float64), "sqeuclidean")
    logits = -(sq - sq.min(axis=1, keepdims=True)) / (2.0 * sigma * sigma)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w
