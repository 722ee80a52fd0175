"""Class-per-directory datasets, seeded train/test splits and the feature cache."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .descriptors import ImageFeatures, Variant
from .imgproc import IMAGE_SUFFIXES, image_size
from .keypoints import DetectorParams

log = logging.getLogger(__name__)

DEFAULT_EXCLUDE = "BACKGROUND_Google"
CACHE_MAGIC = b"SSPMFC01"


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered ``(class name, image paths)`` pairs."""

    classes: tuple[tuple[str, tuple[Path, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        for name, paths in self.classes:
            if not paths:
                raise ValueError(f"class {name!r} has no images")

    @property
    def class_names(self) -> list[str]:
        return [name for name, _ in self.classes]

    @property
    def n_images(self) -> int:
        return sum(len(paths) for _, paths in self.classes)

    def __len__(self) -> int:
        return len(self.classes)


def _decodable(path: Path) -> bool:
    try:
        with PILImage.open(path) as im:
            im.verify()
        return True
    except Exception as exc:  # PIL raises a zoo of exception types
        log.warning("skipping undecodable image %s (%s)", path, exc)
        return False


def scan_dataset(root, exclude: str | None = DEFAULT_EXCLUDE, check: bool = True) -> DatasetManifest:
    """List ``<root>/<class>/*.{jpg,png,ppm}`` in lexicographic order.

    Directories whose name equals ``exclude`` (ignoring case) are skipped.
    With ``check`` every file is opened once and undecodable ones dropped.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    skip = exclude.lower() if exclude else None
    classes = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if skip is not None and class_dir.name.lower() == skip:
            continue
        paths = sorted(
            p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        if check:
            paths = [p for p in paths if _decodable(p)]
        if not paths:
            raise ValueError(f"class {class_dir.name!r} contains no decodable images")
        classes.append((class_dir.name, tuple(paths)))
    if not classes:
        raise ValueError(f"no classes found under {root}")
    return DatasetManifest(tuple(classes))


@dataclass(frozen=True)
class Split:
    seed: int
    train: tuple[tuple[int, Path], ...]
    test: tuple[tuple[int, Path], ...]

    @property
    def train_paths(self) -> list[Path]:
        return [p for _, p in self.train]

    @property
    def train_labels(self) -> np.ndarray:
        return np.array([c for c, _ in self.train], dtype=np.int64)

    @property
    def test_paths(self) -> list[Path]:
        return [p for _, p in self.test]

    @property
    def test_labels(self) -> np.ndarray:
        return np.array([c for c, _ in self.test], dtype=np.int64)


def class_rng(seed: int, class_index: int) -> np.random.Generator:
    """Counter-based generator keyed on ``(seed, class_index)``."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, class_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def make_split(manifest: DatasetManifest, n_train: int = 30, n_test: int = 50, seed: int = 0) -> Split:
    """Shuffle each class independently and deal out train then test images.

    A class keeps at least one test image: it gets ``min(n_train, n - 1)``
    training images and ``min(n_test, n - n_train_taken)`` test images.
    """
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    if n_test < 0:
        raise ValueError(f"n_test must be >= 0, got {n_test}")
    train, test = [], []
    for k, (name, paths) in enumerate(manifest.classes):
        if len(paths) < 2:
            raise ValueError(f"class {name!r} has {len(paths)} image(s); need at least 2 for a split")
        order = class_rng(seed, k).permutation(len(paths))
        n_tr = min(n_train, len(paths) - 1)
        n_te = min(n_test, len(paths) - n_tr)
        train.extend((k, paths[i]) for i in order[:n_tr])
        test.extend((k, paths[i]) for i in order[n_tr : n_tr + n_te])
    return Split(seed, tuple(train), tuple(test))


# -- feature cache ---------------------------------------------------------------


def write_cache_entries(entries, variant) -> bytes:
    """Serialize ``(path, ImageFeatures)`` pairs in the given order."""
    variant = Variant.parse(variant)
    out = [CACHE_MAGIC]
    for path, feats in entries:
        raw = str(path).encode("utf-8")
        kps = np.ascontiguousarray(feats.keypoints, dtype="<f4").reshape(-1, 3)
        desc = np.ascontiguousarray(feats.descriptors, dtype="<f4").reshape(len(kps), -1)
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BII", int(variant), len(kps), desc.shape[1]))
        out.append(kps.tobytes())
        out.append(desc.tobytes())
    return b"".join(out)


def read_cache_entries(data: bytes) -> list[tuple[str, int, np.ndarray, np.ndarray]]:
    """Parse a cache blob into ``(path, variant code, keypoints, descriptors)`` tuples."""
    if data[:8] != CACHE_MAGIC:
        raise ValueError("not a feature cache file (bad magic)")
    offset = 8
    entries = []
    while offset < len(data):
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        path = data[offset : offset + length].decode("utf-8")
        offset += length
        code, count, dim = struct.unpack_from("<BII", data, offset)
        offset += 9
        kps = np.frombuffer(data, dtype="<f4", count=3 * count, offset=offset).reshape(count, 3)
        offset += 12 * count
        desc = np.frombuffer(data, dtype="<f4", count=dim * count, offset=offset).reshape(count, dim)
        offset += 4 * dim * count
        entries.append((path, code, kps.astype(np.float32), desc.astype(np.float32)))
    if offset != len(data):
        raise ValueError("truncated feature cache")
    return entries


class FeatureCache:
    """On-disk store of per-image features for one (variant, detector) pair.

    The detector-parameter hash is part of the file name, so changing the
    detector never reads stale entries. Image sizes are not stored; they
    are recovered from the image header on lookup.
    """

    def __init__(self, path, variant, params: DetectorParams | None = None):
        self.path = Path(path)
        self.variant = Variant.parse(variant)
        self.params = params or DetectorParams()
        self._entries: dict[str, ImageFeatures] = {}
        self._dirty = False
        if self.path.exists():
            for key, code, kps, desc in read_cache_entries(self.path.read_bytes()):
                if code == int(self.variant):
                    self._entries[key] = ImageFeatures(kps, desc, image_size(key), self.variant)

    @classmethod
    def in_directory(cls, directory, variant, params: DetectorParams | None = None) -> "FeatureCache":
        variant = Variant.parse(variant)
        params = params or DetectorParams()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return cls(directory / f"features-{variant.slug}-{params.digest()}.sspmfc", variant, params)

    @staticmethod
    def _key(path) -> str:
        return str(Path(path).resolve())

    def __contains__(self, path) -> bool:
        return self._key(path) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, path) -> ImageFeatures | None:
        return self._entries.get(self._key(path))

    def put(self, path, feats: ImageFeatures) -> None:
        self._entries[self._key(path)] = feats
        self._dirty = True

    def save(self) -> None:
        if not self._dirty and self.path.exists():
            return
        items = sorted(self._entries.items())
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_bytes(write_cache_entries(items, self.variant))
        tmp.replace(self.path)
        self._dirty = False
