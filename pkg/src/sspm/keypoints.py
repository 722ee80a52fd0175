"""Multi-scale Harris corners with Laplacian scale selection."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imgproc import MIN_SIDE, derivatives, gaussian_blur


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float


def _default_scales() -> tuple[float, ...]:
    return tuple(1.2 * 1.4**n for n in range(5))


@dataclass(frozen=True)
class DetectorParams:
    """Harris-Laplace settings.

    ``harris_threshold`` is relative: a corner must exceed this fraction of
    the strongest response found at any scale. ``laplace_threshold`` is an
    absolute bound on the scale-normalized Laplacian magnitude.
    """

    scales: tuple[float, ...] = field(default_factory=_default_scales)
    harris_k: float = 0.06
    harris_threshold: float = 1e-6
    laplace_threshold: float = 0.01
    max_keypoints: int = 1500

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales or any(s <= 0 for s in scales):
            raise ValueError("scales must be a non-empty list of positive values")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly increasing")
        if self.harris_threshold < 0 or self.laplace_threshold < 0:
            raise ValueError("thresholds must be non-negative")
        if self.max_keypoints < 0:
            raise ValueError("max_keypoints must be non-negative")

    def digest(self) -> str:
        """Short stable hash used to key feature caches."""
        text = repr(sorted(asdict(self).items()))
        return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]


def harris_response(ch, sigma: float, k: float = 0.06) -> np.ndarray:
    """Scale-normalized Harris response at differentiation scale ``sigma``.

    The structure tensor is integrated at ``2 * sigma`` and scaled by
    ``sigma**2`` before taking ``det - k * trace**2``.
    """
    smoothed = gaussian_blur(ch, sigma)
    lx, ly = derivatives(smoothed)
    norm = sigma * sigma
    sxx = gaussian_blur(lx * lx, 2.0 * sigma) * norm
    syy = gaussian_blur(ly * ly, 2.0 * sigma) * norm
    sxy = gaussian_blur(lx * ly, 2.0 * sigma) * norm
    trace = sxx + syy
    return sxx * syy - sxy * sxy - k * trace * trace


def scale_normalized_laplacian(ch, sigma: float) -> np.ndarray:
    smoothed = gaussian_blur(ch, sigma)
    second = np.array([1.0, -2.0, 1.0])
    lxx = ndimage.correlate1d(smoothed, second, axis=1, mode="nearest")
    lyy = ndimage.correlate1d(smoothed, second, axis=0, mode="nearest")
    return sigma * sigma * np.abs(lxx + lyy)


def detect_harris_laplace(ch, params: DetectorParams | None = None) -> np.ndarray:
    """Detect keypoints on a scalar channel.

    Returns an ``(n, 3)`` array of ``(x, y, scale)`` rows ordered by Harris
    response (descending), then y, then x.
    """
    params = params or DetectorParams()
    ch = np.asarray(ch, dtype=np.float64)
    if ch.ndim != 2 or min(ch.shape) < MIN_SIDE:
        raise ValueError(f"channel must be 2-D and at least {MIN_SIDE}x{MIN_SIDE}, got {ch.shape}")

    scales = params.scales
    responses = [harris_response(ch, s, params.harris_k) for s in scales]
    laplacians = [scale_normalized_laplacian(ch, s) for s in scales]

    peak = max(float(r.max()) for r in responses)
    if not peak > 0:
        return np.empty((0, 3))
    threshold = params.harris_threshold * peak

    rows = []
    for n, (resp, lap) in enumerate(zip(responses, laplacians)):
        mask = (resp == ndimage.maximum_filter(resp, size=3, mode="nearest")) & (resp > threshold)
        mask &= lap > params.laplace_threshold
        if n > 0:
            mask &= lap >= laplacians[n - 1]
        if n + 1 < len(scales):
            mask &= lap >= laplacians[n + 1]
        ys, xs = np.nonzero(mask)
        for y, x in zip(ys, xs):
            rows.append((-resp[y, x], y, x, scales[n]))

    rows.sort()
    rows = rows[: params.max_keypoints]
    if not rows:
        return np.empty((0, 3))
    return np.array([(x, y, s) for _, y, x, s in rows], dtype=np.float64)
