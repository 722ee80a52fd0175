"""Upright SIFT descriptors and their color variants."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin

from . import imgproc
from .keypoints import DetectorParams, detect_harris_laplace

log = logging.getLogger(__name__)

N_CELLS = 4
N_BINS = 8
BLOCK = N_CELLS * N_CELLS * N_BINS
CLIP = 0.2
MAGNIFICATION = 3.0  # cell side in units of keypoint scale


class Variant(IntEnum):
    SIFT = 0
    HSV = 1
    OPPONENT = 2
    TRANSFORMED = 3

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, Variant):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "sift": cls.SIFT,
            "hsv": cls.HSV,
            "hsvsift": cls.HSV,
            "opponent": cls.OPPONENT,
            "opponentsift": cls.OPPONENT,
            "transformed": cls.TRANSFORMED,
            "transformedcolor": cls.TRANSFORMED,
            "transformedcolorsift": cls.TRANSFORMED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown descriptor variant {value!r}") from None

    @property
    def slug(self) -> str:
        return self.name.lower()

    @property
    def dim(self) -> int:
        return BLOCK if self is Variant.SIFT else 3 * BLOCK


def variant_channels(img, variant) -> tuple[np.ndarray, ...]:
    """Scalar planes a variant describes, in concatenation order."""
    variant = Variant.parse(variant)
    if variant is Variant.SIFT:
        return (imgproc.to_grayscale(img),)
    if variant is Variant.HSV:
        return imgproc.rgb_to_hsv(img)
    if variant is Variant.OPPONENT:
        return imgproc.opponent_color(img)
    return imgproc.transformed_color(img)


def normalize_clip(hist, clip: float = CLIP) -> np.ndarray:
    """Unit-normalize, clip at ``clip`` and renormalize; zero stays zero."""
    hist = np.asarray(hist, dtype=np.float64)
    norm = np.linalg.norm(hist)
    if norm == 0.0:
        return np.zeros_like(hist)
    hist = np.minimum(hist / norm, clip)
    return hist / np.linalg.norm(hist)


def sift_histogram(mag, ori, x: float, y: float, scale: float) -> np.ndarray:
    """Raw 4x4x8 gradient histogram around ``(x, y)`` before normalization.

    Samples every pixel of the square patch of side ``12 * scale``. Pixels
    outside the channel read the nearest border value. Each sample votes
    with Gaussian-weighted magnitude, split trilinearly over the two
    nearest cells per axis and the two nearest orientation bins.
    """
    height, width = mag.shape
    half = 0.5 * N_CELLS * MAGNIFICATION * scale
    cell = MAGNIFICATION * scale

    px = np.arange(math.ceil(x - half), math.floor(x + half) + 1)
    py = np.arange(math.ceil(y - half), math.floor(y + half) + 1)
    gx, gy = np.meshgrid(px, py)
    dx = (gx - x).ravel()
    dy = (gy - y).ravel()
    ix = np.clip(gx, 0, width - 1).ravel()
    iy = np.clip(gy, 0, height - 1).ravel()

    weight = mag[iy, ix] * np.exp(-(dx * dx + dy * dy) / (2.0 * half * half))
    cx = (dx + half) / cell - 0.5
    cy = (dy + half) / cell - 0.5
    co = ori[iy, ix] * (N_BINS / (2.0 * math.pi))

    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    o0 = np.floor(co).astype(np.int64)
    fx, fy, fo = cx - x0, cy - y0, co - o0

    hist = np.zeros(BLOCK)
    for ox, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
        for oy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
            inside = (ox >= 0) & (ox < N_CELLS) & (oy >= 0) & (oy < N_CELLS)
            for ob, wo in ((o0 % N_BINS, 1.0 - fo), ((o0 + 1) % N_BINS, fo)):
                idx = ((oy * N_CELLS + ox) * N_BINS + ob)[inside]
                hist += np.bincount(idx, weights=(weight * wx * wy * wo)[inside], minlength=BLOCK)
    return hist


def sift_at(mag, ori, kp) -> np.ndarray:
    """128-d upright SIFT descriptor at keypoint ``kp = (x, y, scale)``.

    ``mag`` and ``ori`` come from :func:`sspm.imgproc.gradients`.
    """
    x, y, scale = (float(v) for v in kp[:3])
    height, width = mag.shape
    if not (0 <= x < width and 0 <= y < height):
        raise ValueError(f"keypoint ({x}, {y}) lies outside a {width}x{height} channel")
    return normalize_clip(sift_histogram(mag, ori, x, y, scale))


@dataclass(frozen=True)
class ImageFeatures:
    """Keypoints and descriptors for one image.

    ``keypoints`` is ``(n, 3)`` float32 ``(x, y, scale)``; ``descriptors``
    is ``(n, dim)`` float32; ``size`` is the decoded ``(width, height)``.
    """

    keypoints: np.ndarray
    descriptors: np.ndarray
    size: tuple[int, int]
    variant: Variant

    def __len__(self) -> int:
        return len(self.keypoints)


def extract(img, variant="sift", params: DetectorParams | None = None) -> ImageFeatures:
    """Detect on the grayscale plane, then describe every variant channel."""
    variant = Variant.parse(variant)
    img = imgproc.check_image(img)
    height, width = img.shape[:2]
    kps = detect_harris_laplace(imgproc.to_grayscale(img), params)
    if len(kps) == 0:
        log.warning("no keypoints detected in %dx%d image", width, height)
        return ImageFeatures(
            np.empty((0, 3), np.float32), np.empty((0, variant.dim), np.float32), (width, height), variant
        )
    blocks = []
    for ch in variant_channels(img, variant):
        mag, ori = imgproc.gradients(ch)
        blocks.append(np.array([sift_at(mag, ori, kp) for kp in kps]))
    desc = np.concatenate(blocks, axis=1)
    return ImageFeatures(kps.astype(np.float32), desc.astype(np.float32), (width, height), variant)


def extract_path(path, variant="sift", params: DetectorParams | None = None) -> ImageFeatures:
    return extract(imgproc.load_image(path), variant, params)


class DescriptorExtractor(TransformerMixin, BaseEstimator):
    """Turn images (arrays or file paths) into :class:`ImageFeatures`.

    Stateless; ``fit`` only validates parameters. When ``cache`` is given it
    must be a :class:`sspm.dataset.FeatureCache` and path inputs are looked
    up there before being recomputed.
    """

    def __init__(self, variant="sift", detector=None, n_jobs=None, cache=None):
        self.variant = variant
        self.detector = detector
        self.n_jobs = n_jobs
        self.cache = cache

    def fit(self, X=None, y=None):
        self.variant_ = Variant.parse(self.variant)
        self.detector_ = self.detector or DetectorParams()
        return self

    def _one(self, item) -> ImageFeatures:
        if isinstance(item, ImageFeatures):
            return item
        if isinstance(item, (str, Path)):
            return extract_path(item, self.variant_, self.detector_)
        return extract(item, self.variant_, self.detector_)

    def transform(self, X) -> list[ImageFeatures]:
        if not hasattr(self, "variant_"):
            self.fit()
        items = list(X)
        out: list[ImageFeatures | None] = [None] * len(items)
        todo = []
        for i, item in enumerate(items):
            if self.cache is not None and isinstance(item, (str, Path)):
                hit = self.cache.get(item)
                if hit is not None:
                    out[i] = hit
                    continue
            todo.append(i)
        computed = Parallel(n_jobs=self.n_jobs)(delayed(self._one)(items[i]) for i in todo)
        for i, feats in zip(todo, computed):
            out[i] = feats
            if self.cache is not None and isinstance(items[i], (str, Path)):
                self.cache.put(items[i], feats)
        return out
