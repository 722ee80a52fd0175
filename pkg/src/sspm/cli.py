"""Command-line entry point: ``sspm {scan,synth,extract,train,evaluate,experiment}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import FeatureCache, Split, make_split, scan_dataset
from .ensemble import SSPMClassifier, train_ensemble
from .harness import (
    ExperimentConfig,
    cumulative_curve,
    extract_all,
    load_config,
    run_experiment,
    synth_dataset,
)


# flag name -> config key; every flag defaults to None so the config file wins unless given
_CONFIG_FLAGS = {
    "--dataset": "dataset",
    "--variant": "variant",
    "--preset": "preset",
    "--schedule": "schedule",
    "--reps": "reps",
    "--seed": "seed",
    "--combine": "combine",
    "--out": "out",
    "--n-train": "n_train",
    "--n-test": "n_test",
    "--C": "C",
    "--tol": "tol",
    "--sigma": "sigma",
    "--frame": "frame",
    "--exclude": "exclude",
    "--jobs": "jobs",
    "--cache": "cache",
    "--scales": "scales",
    "--harris-k": "harris_k",
    "--harris-threshold": "harris_threshold",
    "--laplace-threshold": "laplace_threshold",
    "--max-keypoints": "max_keypoints",
}
_CHOICES = {
    "--variant": ["sift", "hsv", "opponent", "transformed"],
    "--combine": ["product", "mean"],
}


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="flat 'key = value' config file; flags override it")
    for flag, key in _CONFIG_FLAGS.items():
        parent.add_argument(flag, dest=key, default=None, choices=_CHOICES.get(flag))
    return parent


def _load(args) -> ExperimentConfig:
    overrides = {key: getattr(args, key) for key in _CONFIG_FLAGS.values()}
    return load_config(args.config, overrides)


def _split_for(cfg: ExperimentConfig) -> tuple[Split, list[str]]:
    manifest = scan_dataset(cfg.dataset, cfg.exclude)
    return make_split(manifest, cfg.n_train, cfg.n_test, cfg.seed), manifest.class_names


def cmd_scan(args) -> int:
    cfg = _load(args)
    manifest = scan_dataset(cfg.dataset, cfg.exclude)
    for name, paths in manifest.classes:
        print(f"{name}\t{len(paths)}")
    print(f"{len(manifest)} classes, {manifest.n_images} images")
    return 0


def cmd_synth(args) -> int:
    root = synth_dataset(args.out, args.classes, args.per_class, args.seed, args.size)
    print(f"wrote {args.classes} x {args.per_class} images to {root}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load(args)
    if not cfg.cache:
        raise SystemExit("extract needs --cache DIR (or 'cache = DIR' in the config)")
    manifest = scan_dataset(cfg.dataset, cfg.exclude)
    paths = [p for _, ps in manifest.classes for p in ps]
    feats = extract_all(paths, cfg)
    cache = FeatureCache.in_directory(cfg.cache, cfg.variant, cfg.detector)
    n_kp = sum(len(f) for f in feats.values())
    print(f"{len(feats)} images, {n_kp} keypoints cached in {cache.path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if not cfg.out:
        raise SystemExit("train needs --out DIR for the ensemble")
    split, class_names = _split_for(cfg)
    features = extract_all(split.train_paths, cfg)
    clf = train_ensemble(
        split,
        variant=cfg.variant,
        geometry=cfg.preset,
        schedule=cfg.schedule,
        base_seed=cfg.seed,
        features=features,
        C=cfg.C,
        tol=cfg.tol,
        sigma=cfg.sigma,
        combine=cfg.combine,
        detector=cfg.detector,
        frame=cfg.frame,
        n_jobs=cfg.jobs,
    )
    out = clf.save(cfg.out, class_names)
    split_info = {
        "seed": split.seed,
        "train": [[c, str(p)] for c, p in split.train],
        "test": [[c, str(p)] for c, p in split.test],
    }
    (out / "split.json").write_text(json.dumps(split_info, indent=1) + "\n")
    print(f"trained {len(clf.members_)} member(s) on {len(split.train)} images -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    model_dir = Path(args.model)
    clf = SSPMClassifier.load(model_dir, n_jobs=cfg.jobs)
    split_file = model_dir / "split.json"
    if split_file.exists() and not cfg.dataset:
        test = [(c, Path(p)) for c, p in json.loads(split_file.read_text())["test"]]
    else:
        test = list(_split_for(cfg)[0].test)
    paths = [p for _, p in test]
    labels = np.array([c for c, _ in test])
    det = clf.detector
    eval_cfg = replace(
        cfg,
        variant=clf.variant_.slug,
        scales=det.scales,
        harris_k=det.harris_k,
        harris_threshold=det.harris_threshold,
        laplace_threshold=det.laplace_threshold,
        max_keypoints=det.max_keypoints,
    )
    features = extract_all(paths, eval_cfg)
    probs = clf.member_proba([features[p] for p in paths])
    truth = np.searchsorted(clf.classes_, labels)
    curve = cumulative_curve(probs, truth, clf.combine)
    for m, acc in enumerate(curve, 1):
        print(f"members={m}\taccuracy={acc:.4f}")
    print(f"accuracy: {100 * curve[-1]:.2f}% on {len(paths)} test images")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg)
    if cfg.out:
        csv_path, txt_path = report.write(cfg.out)
        print(f"report written to {txt_path} and {csv_path}")
    sys.stdout.write(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sspm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _config_parent()

    sub.add_parser("scan", parents=[parent], help="list classes and image counts").set_defaults(func=cmd_scan)

    p = sub.add_parser("synth", help="render a synthetic class-per-directory dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    sub.add_parser("extract", parents=[parent], help="fill the feature cache").set_defaults(func=cmd_extract)
    sub.add_parser("train", parents=[parent], help="train an ensemble on one split").set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[parent], help="score a trained ensemble on its test split")
    p.add_argument("--model", required=True, help="directory written by 'train'")
    p.set_defaults(func=cmd_evaluate)

    sub.add_parser("experiment", parents=[parent], help="full repeated-split protocol").set_defaults(
        func=cmd_experiment
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
