"""Sliding-window spatial pooling of soft visual-word codes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codebook import Vocabulary, median_distance, sample_vocabulary, soft_assign


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class SspmConfig:
    """Subwindow size as a fraction of the image, step as a fraction of the subwindow."""

    width_ratio: float = 1 / 3
    height_ratio: float = 1 / 3
    step_ratio: float = 1 / 3

    def __post_init__(self):
        for name in ("width_ratio", "height_ratio", "step_ratio"):
            value = float(getattr(self, name))
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def preset(cls, name: str) -> "SspmConfig":
        try:
            return PRESETS[str(name).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown SSPM preset {name!r}; choose from {sorted(PRESETS)}") from None

    @classmethod
    def parse(cls, value) -> "SspmConfig":
        """Accept a preset name, an existing config, or ``"rw,rh,s"`` ratios (fractions allowed)."""
        if isinstance(value, SspmConfig):
            return value
        text = str(value).strip()
        if text.upper() in PRESETS:
            return PRESETS[text.upper()]
        parts = [float(Fraction(p.strip())) for p in text.split(",")]
        if len(parts) == 2:
            return cls(parts[0], parts[0], parts[1])
        if len(parts) == 3:
            return cls(*parts)
        raise ValueError(f"cannot parse SSPM geometry {value!r}")

    def describe(self) -> str:
        for name, cfg in PRESETS.items():
            if cfg == self:
                return name
        return f"{self.width_ratio!r},{self.height_ratio!r},{self.step_ratio!r}"


PRESETS = {
    "A": SspmConfig(1 / 2, 1 / 2, 1 / 2),
    "B": SspmConfig(1 / 3, 1 / 3, 1 / 3),
}


class Window(NamedTuple):
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int


def _axis_positions(length: int, ratio: float, step_ratio: float) -> tuple[list[int], int]:
    size = _round_half_up(ratio * length)
    if size < 1:
        raise ValueError(f"subwindow ratio {ratio} gives an empty window on a {length}-pixel axis")
    size = min(size, length)
    step = max(1, _round_half_up(step_ratio * size))
    count = (length - size) // step + 1
    return [i * step for i in range(count)], size


def generate_windows(width: int, height: int, cfg: SspmConfig | str = "B") -> list[Window]:
    """Subwindows ordered y-outer, x-inner.

    Margins at the right and bottom narrower than one step are left
    uncovered, so the count depends only on the image size and ``cfg``.
    """
    cfg = SspmConfig.parse(cfg)
    xs, w = _axis_positions(int(width), cfg.width_ratio, cfg.step_ratio)
    ys, h = _axis_positions(int(height), cfg.height_ratio, cfg.step_ratio)
    return [Window(x, y, x + w, y + h) for y in ys for x in xs]


def membership(points, windows) -> np.ndarray:
    """Boolean ``(len(windows), len(points))`` point-in-window matrix (centers only)."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts.reshape(len(pts), -1) if len(pts) else np.empty((0, 2))
    bounds = np.asarray(windows, dtype=np.float64).reshape(-1, 4)
    x, y = pts[:, 0], pts[:, 1]
    return (
        (x[None, :] >= bounds[:, 0:1])
        & (x[None, :] < bounds[:, 2:3])
        & (y[None, :] >= bounds[:, 1:2])
        & (y[None, :] < bounds[:, 3:4])
    )


def pool(points, codes, windows, n_words: int) -> np.ndarray:
    """Concatenate L1-normalized per-window sums of soft codes.

    ``points`` holds ``(x, y, ...)`` rows and ``codes`` the matching
    ``(n, n_words)`` soft assignments. Windows overlap, so one point can feed
    several blocks. Empty windows give all-zero blocks.
    """
    codes = np.asarray(codes, dtype=np.float64).reshape(-1, n_words)
    if len(codes) != len(points):
        raise ValueError(f"{len(points)} points but {len(codes)} codes")
    if len(codes) == 0:
        return np.zeros(len(windows) * n_words)
    sums = membership(points, windows).astype(np.float64) @ codes
    totals = sums.sum(axis=1, keepdims=True)
    np.divide(sums, totals, out=sums, where=totals > 0)
    return sums.ravel()


def resolve_sigma(policy, pool_descriptors, seed: int) -> float:
    """Bandwidth from a policy: a number, ``"median"`` or ``"median:<factor>"``."""
    if isinstance(policy, (int, float)):
        if not policy > 0:
            raise ValueError(f"sigma must be positive, got {policy}")
        return float(policy)
    text = str(policy).strip().lower()
    if text.startswith("median"):
        factor = 1.0
        if ":" in text:
            factor = float(text.split(":", 1)[1])
        return factor * median_distance(pool_descriptors, seed)
    return resolve_sigma(float(text), pool_descriptors, seed)


class SSPMEncoder(TransformerMixin, BaseEstimator):
    """Soft bag-of-words with sliding-window pooling.

    ``fit`` takes a list of :class:`sspm.descriptors.ImageFeatures`, samples
    ``n_words`` exemplar descriptors from their pooled descriptors and fixes
    the kernel bandwidth. ``transform`` maps each image to one row of a
    sparse matrix with ``n_windows * n_words`` columns.

    Keypoint coordinates are rescaled onto a ``frame x frame`` square before
    pooling so every image yields the same window layout whatever its
    aspect ratio. With ``frame=None`` (or 0) windows follow each image's own size
    and all images must then agree on the window count.
    """

    def __init__(self, n_words=200, geometry="B", sigma="median", frame=300, random_state=0):
        self.n_words = n_words
        self.geometry = geometry
        self.sigma = sigma
        self.frame = frame
        self.random_state = random_state

    def fit(self, X, y=None):
        descs = [f.descriptors for f in X if len(f)]
        if not descs:
            raise ValueError("no descriptors to build a vocabulary from")
        pool_ = np.concatenate(descs)
        seed = int(self.random_state)
        vocab = sample_vocabulary(pool_, int(self.n_words), seed)
        self.vocabulary_ = vocab.with_sigma(resolve_sigma(self.sigma, pool_, seed))
        self.geometry_ = SspmConfig.parse(self.geometry)
        return self

    @classmethod
    def from_vocabulary(cls, vocab: Vocabulary, geometry="B", frame=300) -> "SSPMEncoder":
        enc = cls(n_words=vocab.size, geometry=geometry, sigma=vocab.sigma, frame=frame, random_state=vocab.seed)
        enc.vocabulary_ = vocab
        enc.geometry_ = SspmConfig.parse(geometry)
        return enc

    def encode(self, feats) -> np.ndarray:
        check_is_fitted(self, "vocabulary_")
        points = np.asarray(feats.keypoints, dtype=np.float64)[:, :2]
        if not self.frame:
            windows = generate_windows(*feats.size, self.geometry_)
        else:
            width, height = feats.size
            points = points * (self.frame / np.array([width, height], dtype=np.float64))
            windows = generate_windows(self.frame, self.frame, self.geometry_)
        codes = soft_assign(feats.descriptors, self.vocabulary_)
        return pool(points, codes, windows, self.vocabulary_.size)

    def transform(self, X) -> sparse.csr_matrix:
        rows = [self.encode(f) for f in X]
        if len({len(r) for r in rows}) > 1:
            raise ValueError("images produce different window counts; resize them to a common size")
        return sparse.csr_matrix(np.vstack(rows)) if rows else sparse.csr_matrix((0, 0))
