"""Ensembles of (vocabulary, linear model) members combined by probability product."""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .codebook import Vocabulary
from .descriptors import DescriptorExtractor, ImageFeatures, Variant
from .keypoints import DetectorParams
from .linear import LogisticOvR
from .pooling import SSPMEncoder, SspmConfig

PROB_FLOOR = 1e-300
_LEVELS = (1000, 800, 600, 400, 200)


def make_schedule(kind) -> list[int]:
    """Vocabulary sizes, one per member.

    ``kind`` is a list of sizes or one of ``"fixed:M:N"``, ``"variable:M"``
    (1000, 900, ... for ``M <= 10``), ``"eq1"`` (pairs at 1000, 800, ...,
    200) and ``"eq2"`` (triples at the same levels).
    """
    if not isinstance(kind, str):
        sizes = [int(n) for n in kind]
        if not sizes or min(sizes) < 1:
            raise ValueError("a schedule needs at least one size, all >= 1")
        return sizes
    parts = kind.strip().lower().split(":")
    name, args = parts[0], parts[1:]
    try:
        if name == "fixed" and len(args) == 2:
            m, n = int(args[0]), int(args[1])
            if m < 1 or n < 1:
                raise ValueError(f"fixed schedule needs M >= 1 and N >= 1, got {kind!r}")
            return [n] * m
        if name == "variable" and len(args) == 1:
            m = int(args[0])
            if not 1 <= m <= 10:
                raise ValueError(f"variable schedule supports 1 to 10 members, got {m}")
            return [1000 - 100 * i for i in range(m)]
        if name == "eq1" and not args:
            return [n for n in _LEVELS for _ in range(2)]
        if name == "eq2" and not args:
            return [n for n in _LEVELS for _ in range(3)]
    except ValueError as exc:
        if "invalid literal" in str(exc):
            raise ValueError(f"malformed schedule {kind!r}") from None
        raise
    raise ValueError(f"unknown schedule {kind!r}; use fixed:M:N, variable:M, eq1 or eq2")


def combine_predict(distributions: Sequence, rule: str = "product") -> np.ndarray:
    """Merge member class distributions.

    Each entry is a ``(n_classes,)`` vector or an ``(n_samples, n_classes)``
    batch. ``"product"`` multiplies in the log domain after flooring every
    probability at 1e-300, then renormalizes; ``"mean"`` averages.
    """
    if len(distributions) == 0:
        raise ValueError("need at least one distribution")
    arrays = [np.asarray(d, dtype=np.float64) for d in distributions]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError(f"distribution shapes differ: {[a.shape for a in arrays]}")
    stack = np.stack(arrays)
    if rule == "mean":
        out = stack.mean(axis=0)
        return out / out.sum(axis=-1, keepdims=True)
    if rule != "product":
        raise ValueError(f"unknown combination rule {rule!r}")
    logs = np.log(np.maximum(stack, PROB_FLOOR)).sum(axis=0)
    logs -= logs.max(axis=-1, keepdims=True)
    out = np.exp(logs)
    return out / out.sum(axis=-1, keepdims=True)


def member_seed(base_seed: int, index: int) -> int:
    return int(base_seed) ^ int(index)


class Member(NamedTuple):
    encoder: SSPMEncoder
    model: LogisticOvR

    @property
    def vocabulary(self) -> Vocabulary:
        return self.encoder.vocabulary_


class SSPMClassifier(ClassifierMixin, BaseEstimator):
    """Keypoints, soft sliding-pyramid encoding and an ensemble of
    one-vs-rest logistic models, end to end.

    ``X`` may hold RGB float images, image paths or precomputed
    :class:`~sspm.descriptors.ImageFeatures`. Descriptors are extracted once
    per image and shared by all members; member ``m`` draws its vocabulary
    with seed ``random_state ^ m``.
    """

    def __init__(
        self,
        variant="sift",
        geometry="B",
        schedule="fixed:1:200",
        C=1.0,
        tol=1e-4,
        sigma="median",
        combine="product",
        detector=None,
        frame=300,
        random_state=0,
        n_jobs=None,
        cache=None,
    ):
        self.variant = variant
        self.geometry = geometry
        self.schedule = schedule
        self.C = C
        self.tol = tol
        self.sigma = sigma
        self.combine = combine
        self.detector = detector
        self.frame = frame
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.cache = cache

    def _extractor(self) -> DescriptorExtractor:
        return DescriptorExtractor(self.variant, self.detector, self.n_jobs, self.cache).fit()

    def extract(self, X) -> list[ImageFeatures]:
        return self._extractor().transform(X)

    def fit(self, X, y):
        feats = self.extract(X)
        y = np.asarray(y)
        if len(y) != len(feats):
            raise ValueError(f"{len(feats)} images but {len(y)} labels")
        self.sizes_ = make_schedule(self.schedule)
        self.variant_ = Variant.parse(self.variant)
        self.geometry_ = SspmConfig.parse(self.geometry)
        self.classes_ = np.unique(y)
        self.members_ = []
        for m, n_words in enumerate(self.sizes_):
            enc = SSPMEncoder(n_words, self.geometry_, self.sigma, self.frame, member_seed(self.random_state, m))
            enc.fit(feats)
            clf = LogisticOvR(self.C, self.tol, n_jobs=self.n_jobs).fit(enc.transform(feats), y)
            self.members_.append(Member(enc, clf))
        return self

    def member_proba(self, X) -> list[np.ndarray]:
        """Per-member ``(n_samples, n_classes)`` probabilities, in member order."""
        check_is_fitted(self, "members_")
        feats = self.extract(X)
        return [mem.model.predict_proba(mem.encoder.transform(feats)) for mem in self.members_]

    def predict_proba(self, X) -> np.ndarray:
        return combine_predict(self.member_proba(X), self.combine)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    # -- persistence ------------------------------------------------------------

    def save(self, directory, class_names=None) -> Path:
        """Write ``manifest.json`` plus one vocabulary and one model file per member."""
        check_is_fitted(self, "members_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        members = []
        for m, mem in enumerate(self.members_):
            vocab_file, model_file = f"member-{m:02d}.vocab", f"member-{m:02d}.model"
            mem.vocabulary.save(directory / vocab_file)
            mem.model.save(directory / model_file)
            members.append(
                {
                    "vocabulary": vocab_file,
                    "model": model_file,
                    "n_words": mem.vocabulary.size,
                    "seed": mem.vocabulary.seed,
                    "sigma": mem.vocabulary.sigma,
                }
            )
        detector = self.detector or DetectorParams()
        manifest = {
            "format": "sspm-ensemble/1",
            "variant": self.variant_.slug,
            "geometry": self.geometry_.describe(),
            "schedule": self.sizes_,
            "base_seed": int(self.random_state),
            "C": self.C,
            "tol": self.tol,
            "sigma": str(self.sigma),
            "combine": self.combine,
            "frame": self.frame,
            "detector": {
                "scales": list(detector.scales),
                "harris_k": detector.harris_k,
                "harris_threshold": detector.harris_threshold,
                "laplace_threshold": detector.laplace_threshold,
                "max_keypoints": detector.max_keypoints,
            },
            "classes": self.classes_.tolist(),
            "class_names": list(class_names) if class_names is not None else None,
            "members": members,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory, cache=None, n_jobs=None) -> "SSPMClassifier":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        detector = DetectorParams(
            scales=tuple(manifest["detector"]["scales"]),
            **{k: v for k, v in manifest["detector"].items() if k != "scales"},
        )
        clf = cls(
            variant=manifest["variant"],
            geometry=manifest["geometry"],
            schedule=manifest["schedule"],
            C=manifest["C"],
            tol=manifest["tol"],
            sigma=manifest["sigma"],
            combine=manifest["combine"],
            detector=detector,
            frame=manifest["frame"],
            random_state=manifest["base_seed"],
            n_jobs=n_jobs,
            cache=cache,
        )
        clf.sizes_ = list(manifest["schedule"])
        clf.variant_ = Variant.parse(manifest["variant"])
        clf.geometry_ = SspmConfig.parse(manifest["geometry"])
        clf.classes_ = np.asarray(manifest["classes"])
        clf.class_names_ = manifest.get("class_names")
        clf.members_ = []
        for entry in manifest["members"]:
            vocab = Vocabulary.load(directory / entry["vocabulary"])
            model = LogisticOvR.load(directory / entry["model"], clf.classes_)
            model.set_params(C=clf.C, tol=clf.tol)
            enc = SSPMEncoder.from_vocabulary(vocab, clf.geometry_, clf.frame)
            clf.members_.append(Member(enc, model))
        return clf


def train_ensemble(
    split,
    variant="sift",
    geometry="B",
    schedule="fixed:1:200",
    base_seed: int = 0,
    features: dict | None = None,
    **params,
) -> SSPMClassifier:
    """Fit an :class:`SSPMClassifier` on the training half of ``split``.

    ``features`` optionally maps image paths to precomputed
    :class:`ImageFeatures`.
    """
    X = split.train_paths
    if features is not None:
        X = [features.get(p, p) for p in X]
    clf = SSPMClassifier(variant=variant, geometry=geometry, schedule=schedule, random_state=base_seed, **params)
    return clf.fit(X, split.train_labels)
