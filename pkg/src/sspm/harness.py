"""Experiment protocol: repeated random splits, cumulative ensemble curves, reports."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw

from .dataset import DEFAULT_EXCLUDE, FeatureCache, make_split, scan_dataset
from .descriptors import DescriptorExtractor, Variant
from .ensemble import combine_predict, make_schedule, train_ensemble
from .keypoints import DetectorParams
from .pooling import SspmConfig

log = logging.getLogger(__name__)


def accuracy(predictions, truth) -> float:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValueError(f"{len(predictions)} predictions but {len(truth)} labels")
    if len(truth) == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.mean(predictions == truth))


# -- configuration ---------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything one experiment depends on. Defaults follow the Caltech-101
    protocol: 30 train / 50 test per class, 4 repetitions, 15 members."""

    dataset: str = ""
    variant: str = "transformed"
    preset: str = "B"
    schedule: str = "eq2"
    n_train: int = 30
    n_test: int = 50
    reps: int = 4
    seed: int = 0
    C: float = 1.0
    tol: float = 1e-4
    sigma: str = "median"
    combine: str = "product"
    frame: int = 300
    exclude: str = DEFAULT_EXCLUDE
    jobs: int = 1
    cache: str = ""
    out: str = ""
    scales: tuple[float, ...] = field(default_factory=lambda: DetectorParams().scales)
    harris_k: float = 0.06
    harris_threshold: float = 1e-6
    laplace_threshold: float = 0.01
    max_keypoints: int = 1500

    def __post_init__(self):
        if int(self.reps) < 1:
            raise ValueError("reps must be >= 1")
        self.variant = Variant.parse(self.variant).slug
        SspmConfig.parse(self.preset)
        make_schedule(self.schedule)
        if self.combine not in ("product", "mean"):
            raise ValueError(f"combine must be 'product' or 'mean', got {self.combine!r}")

    @property
    def detector(self) -> DetectorParams:
        return DetectorParams(
            tuple(self.scales), self.harris_k, self.harris_threshold, self.laplace_threshold, self.max_keypoints
        )

    def echo(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string values (config file / CLI); unknown keys are an error."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)


_INT_KEYS = {"n_train", "n_test", "reps", "seed", "frame", "jobs", "max_keypoints"}
_FLOAT_KEYS = {"C", "tol", "harris_k", "harris_threshold", "laplace_threshold"}


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key == "scales":
        return tuple(float(s) for s in raw.replace(",", " ").split())
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(values)


# -- experiment ------------------------------------------------------------------


@dataclass
class Report:
    accuracies: list[float]
    curves: list[list[float]]
    config: dict
    wall_clock: float = 0.0

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean_curve(self) -> list[float]:
        return [float(v) for v in np.mean(np.array(self.curves), axis=0)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["repetition", "members", "accuracy"])
        for r, curve in enumerate(self.curves):
            for m, acc in enumerate(curve, 1):
                writer.writerow([r, m, repr(acc)])
        for m, acc in enumerate(self.mean_curve, 1):
            writer.writerow(["mean", m, repr(acc)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = ["configuration:"]
        lines += [f"  {k} = {v}" for k, v in self.config.items()]
        lines.append("")
        lines.append("members  " + "  ".join(f"rep{r}" for r in range(len(self.curves))) + "    mean")
        for m, mean in enumerate(self.mean_curve):
            row = "  ".join(f"{100 * c[m]:6.2f}" for c in self.curves)
            lines.append(f"{m + 1:7d}  {row}  {100 * mean:6.2f}")
        lines.append("")
        lines.append(f"mean accuracy: {100 * self.mean_accuracy:.2f}% over {len(self.accuracies)} repetition(s)")
        lines.append(f"wall clock: {self.wall_clock:.1f} s")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = out_dir / "report.csv", out_dir / "report.txt"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        txt_path.write_text(self.to_text(), encoding="utf-8")
        return csv_path, txt_path


def cumulative_curve(member_probs, truth, rule: str = "product") -> list[float]:
    """Accuracy of the first ``m`` members combined, for ``m = 1..M``."""
    return [
        accuracy(np.argmax(combine_predict(member_probs[:m], rule), axis=1), truth)
        for m in range(1, len(member_probs) + 1)
    ]


def extract_all(paths, cfg: ExperimentConfig) -> dict:
    """Features for ``paths``, going through the on-disk cache when configured."""
    cache = FeatureCache.in_directory(cfg.cache, cfg.variant, cfg.detector) if cfg.cache else None
    extractor = DescriptorExtractor(cfg.variant, cfg.detector, n_jobs=cfg.jobs, cache=cache).fit()
    paths = sorted(set(paths))
    feats = extractor.transform(paths)
    if cache is not None:
        cache.save()
    return dict(zip(paths, feats))


def run_experiment(cfg: ExperimentConfig) -> Report:
    start = time.perf_counter()
    manifest = scan_dataset(cfg.dataset, cfg.exclude)
    splits = [make_split(manifest, cfg.n_train, cfg.n_test, cfg.seed + r) for r in range(cfg.reps)]
    features = extract_all([p for s in splits for p in s.train_paths + s.test_paths], cfg)

    accuracies, curves = [], []
    for r, split in enumerate(splits):
        clf = train_ensemble(
            split,
            variant=cfg.variant,
            geometry=cfg.preset,
            schedule=cfg.schedule,
            base_seed=cfg.seed + r,
            features=features,
            C=cfg.C,
            tol=cfg.tol,
            sigma=cfg.sigma,
            combine=cfg.combine,
            detector=cfg.detector,
            frame=cfg.frame,
            n_jobs=cfg.jobs,
        )
        probs = clf.member_proba([features[p] for p in split.test_paths])
        truth = np.searchsorted(clf.classes_, split.test_labels)
        curve = cumulative_curve(probs, truth, cfg.combine)
        log.info("repetition %d: accuracy %.4f with %d member(s)", r, curve[-1], len(curve))
        curves.append(curve)
        accuracies.append(curve[-1])
    return Report(accuracies, curves, cfg.echo(), time.perf_counter() - start)


# -- synthetic data --------------------------------------------------------------

_SHAPES = ("ellipse", "rectangle", "triangle", "cross", "ring", "diamond", "bars", "star")
_STROKES = ("solid", "hatched", "dotted", "grid", "checker")


def _class_style(k: int, n_classes: int):
    hue = k / n_classes
    fg = np.array(_hsv(hue, 0.85, 0.95))
    bg = np.array(_hsv((hue + 0.5) % 1.0, 0.35, 0.35))
    return _SHAPES[k % len(_SHAPES)], _STROKES[k % len(_STROKES)], fg, bg


def _hsv(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - math.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _polygon(shape, cx, cy, r, angle):
    if shape == "triangle":
        k, radii = 3, [r]
    elif shape == "diamond":
        k, radii = 4, [r]
    elif shape == "star":
        k, radii = 10, [r, 0.45 * r]
    else:
        raise ValueError(shape)
    return [
        (cx + radii[i % len(radii)] * math.cos(angle + 2 * math.pi * i / k),
         cy + radii[i % len(radii)] * math.sin(angle + 2 * math.pi * i / k))
        for i in range(k)
    ]


def render_sample(k: int, n_classes: int, rng: np.random.Generator, size: int = 128) -> PILImage.Image:
    """One procedurally drawn image of class ``k``."""
    shape, stroke, fg, bg = _class_style(k, n_classes)
    bg = np.clip(bg + rng.uniform(-0.08, 0.08, 3), 0, 1)
    fg = np.clip(fg + rng.uniform(-0.08, 0.08, 3), 0, 1)
    im = PILImage.new("RGB", (size, size), tuple(int(255 * c) for c in bg))
    draw = ImageDraw.Draw(im)
    color = tuple(int(255 * c) for c in fg)
    r = rng.uniform(0.22, 0.34) * size
    cx, cy = rng.uniform(r + 4, size - r - 4, 2)
    angle = rng.uniform(0, 2 * math.pi)
    box = [cx - r, cy - r, cx + r, cy + r]
    width = max(2, int(r / 5))

    if shape == "ellipse":
        draw.ellipse([cx - r, cy - 0.7 * r, cx + r, cy + 0.7 * r], fill=color)
    elif shape == "rectangle":
        draw.rectangle(box, fill=color)
    elif shape == "ring":
        draw.ellipse(box, outline=color, width=width)
    elif shape == "cross":
        draw.rectangle([cx - r, cy - width, cx + r, cy + width], fill=color)
        draw.rectangle([cx - width, cy - r, cx + width, cy + r], fill=color)
    elif shape == "bars":
        for i in range(4):
            x0 = cx - r + i * (2 * r / 4)
            draw.rectangle([x0, cy - r, x0 + r / 4, cy + r], fill=color)
    else:
        draw.polygon(_polygon(shape, cx, cy, r, angle), fill=color)

    if stroke == "hatched":
        for off in range(-size, size, 9):
            draw.line([(off, 0), (off + size, size)], fill=tuple(int(255 * c * 0.5) for c in bg), width=2)
    elif stroke == "dotted":
        for _ in range(40):
            x, y = rng.uniform(0, size, 2)
            draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=tuple(int(255 * (1 - c)) for c in bg))
    elif stroke == "grid":
        shade = tuple(int(255 * min(1.0, c * 1.8 + 0.1)) for c in bg)
        for off in range(int(rng.integers(0, 16)), size, 16):
            draw.line([(off, 0), (off, size)], fill=shade, width=1)
            draw.line([(0, off), (size, off)], fill=shade, width=1)
    elif stroke == "checker":
        shade = tuple(int(255 * c * 0.4) for c in bg)
        ox, oy = rng.integers(0, 20, 2)
        for i in range(-1, size // 10 + 1):
            for j in range(-1, size // 10 + 1):
                if (i + j) % 2 == 0 and (i * j) % 3 == 0:
                    x0, y0 = ox + 10 * i - 10, oy + 10 * j - 10
                    draw.rectangle([x0, y0, x0 + 9, y0 + 9], fill=shade)

    arr = np.asarray(im, dtype=np.float64) / 255.0
    arr = np.clip(arr + rng.normal(0.0, 0.03, arr.shape), 0.0, 1.0)
    return PILImage.fromarray(np.round(arr * 255).astype(np.uint8), "RGB")


def synth_dataset(root, classes: int = 5, per_class: int = 80, seed: int = 0, size: int = 128) -> Path:
    """Write ``classes`` directories of ``per_class`` PNG images under ``root``."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_class < 1:
        raise ValueError(f"need at least 1 image per class, got {per_class}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k in range(classes):
        shape, stroke, _, _ = _class_style(k, classes)
        class_dir = root / f"class{k:02d}_{shape}_{stroke}"
        class_dir.mkdir(exist_ok=True)
        for i in range(per_class):
            rng = np.random.default_rng([seed, k, i])
            render_sample(k, classes, rng, size).save(class_dir / f"img{i:04d}.png", optimize=False)
    return root
