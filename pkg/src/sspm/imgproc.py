"""Image decoding, color-space transforms and low-level filtering.

Images are ``(height, width, 3)`` float64 arrays with intensities in [0, 1];
channels are ``(height, width)`` float64 arrays.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

MAX_SIDE = 300
MIN_SIDE = 32
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".ppm")

_TWO_PI = 2.0 * math.pi


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def resized_size(width: int, height: int, max_side: int = MAX_SIDE) -> tuple[int, int]:
    """Size an image of ``width x height`` ends up with after loading."""
    longest = max(width, height)
    if longest <= max_side:
        return width, height
    scale = max_side / longest
    return max(1, _round_half_up(width * scale)), max(1, _round_half_up(height * scale))


def image_size(path) -> tuple[int, int]:
    """(width, height) of the decoded image, read from the header only."""
    with PILImage.open(path) as im:
        return resized_size(*im.size)


def load_image(path, max_side: int = MAX_SIDE) -> np.ndarray:
    """Decode ``path`` into an RGB float image, shrinking it so the longest
    side is at most ``max_side`` pixels.

    Grayscale and palette images are replicated to three equal channels.
    """
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ValueError(f"unsupported image format: {path}")
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        size = resized_size(*im.size, max_side=max_side)
        if size != im.size:
            im = im.resize(size, PILImage.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if min(arr.shape[:2]) < MIN_SIDE:
        raise ValueError(
            f"{path}: image is {arr.shape[1]}x{arr.shape[0]}, need at least {MIN_SIDE} px per side"
        )
    return arr


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def to_grayscale(img) -> np.ndarray:
    img = check_image(img)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def standardize(ch) -> np.ndarray:
    """Zero-mean, unit population-variance copy of ``ch``; flat channels become zeros."""
    ch = np.asarray(ch, dtype=np.float64)
    mean = ch.mean()
    std = ch.std()
    # rounding leaves ~1e-17 spread on constant planes
    if not std > 1e-12 * max(1.0, abs(mean)):
        return np.zeros_like(ch)
    return (ch - mean) / std


def transformed_color(img) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-channel standardized R, G, B planes."""
    img = check_image(img)
    return tuple(standardize(img[..., c]) for c in range(3))


def opponent_color(img) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    img = check_image(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    o1 = (r - g) / math.sqrt(2.0)
    o2 = (r + g - 2.0 * b) / math.sqrt(6.0)
    o3 = (r + g + b) / math.sqrt(3.0)
    return o1, o2, o3


def rgb_to_hsv(img) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone HSV with hue scaled to [0, 1); hue is 0 for achromatic pixels."""
    img = check_image(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    v = img.max(axis=2)
    chroma = v - img.min(axis=2)
    s = np.divide(chroma, v, out=np.zeros_like(v), where=v > 0)

    safe = np.where(chroma > 0, chroma, 1.0)
    h = np.zeros_like(v)
    red = (v == r) & (chroma > 0)
    green = (v == g) & (chroma > 0) & ~red
    blue = (chroma > 0) & ~red & ~green
    h[red] = ((g - b)[red] / safe[red]) % 6.0
    h[green] = (b - r)[green] / safe[green] + 2.0
    h[blue] = (r - g)[blue] / safe[blue] + 4.0
    h = h / 6.0
    h[h >= 1.0] -= 1.0
    return h, s, v


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(ch, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with edge replication at the borders."""
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(ch, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def derivatives(ch) -> tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy): central differences inside, one-sided at the borders."""
    ch = np.asarray(ch, dtype=np.float64)
    if min(ch.shape) < 3:
        raise ValueError(f"channel must be at least 3x3, got {ch.shape}")
    dy, dx = np.gradient(ch)
    return dx, dy


def gradients(ch) -> tuple[np.ndarray, np.ndarray]:
    """Gradient magnitude and orientation in [0, 2*pi)."""
    dx, dy = derivatives(ch)
    mag = np.hypot(dx, dy)
    ori = np.mod(np.arctan2(dy, dx), _TWO_PI)
    ori[ori >= _TWO_PI] = 0.0
    return mag, ori
