from pathlib import Path

import numpy as np
import pytest

from sspm.cli import main
from sspm.harness import (
    ExperimentConfig,
    Report,
    accuracy,
    cumulative_curve,
    load_config,
    parse_config_text,
    run_experiment,
    synth_dataset,
)


@pytest.mark.parametrize(
    "pred, truth, expected",
    [([1, 2, 3], [1, 2, 3], 1.0), ([0, 0], [1, 1], 0.0), ([0, 1, 2, 2], [0, 1, 2, 1], 0.75)],
)
def test_accuracy(pred, truth, expected):
    assert accuracy(pred, truth) == expected


def test_accuracy_errors():
    with pytest.raises(ValueError):
        accuracy([1, 2], [1])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_synth_counts_and_determinism(tmp_path):
    a = synth_dataset(tmp_path / "a", classes=5, per_class=4, seed=2)
    b = synth_dataset(tmp_path / "b", classes=5, per_class=4, seed=2)
    dirs = sorted(p for p in a.iterdir())
    assert len(dirs) == 5 and all(len(list(d.glob("*.png"))) == 4 for d in dirs)
    for f in sorted(a.glob("*/*.png")):
        assert f.read_bytes() == (b / f.relative_to(a)).read_bytes()
    c = synth_dataset(tmp_path / "c", classes=5, per_class=4, seed=3)
    assert (a / dirs[0].name / "img0000.png").read_bytes() != (c / dirs[0].name / "img0000.png").read_bytes()


def test_synth_full_size_counts(tmp_path):
    root = synth_dataset(tmp_path, classes=5, per_class=80, size=48)
    assert sorted(len(list(d.iterdir())) for d in root.iterdir()) == [80] * 5


def test_synth_needs_two_classes(tmp_path):
    with pytest.raises(ValueError):
        synth_dataset(tmp_path, classes=1)


def test_config_text_parsing(tmp_path):
    text = "# protocol\nvariant = opponent  # color\nschedule=fixed:2:50\n\nreps = 2\nscales = 1.0, 2.0\n"
    assert parse_config_text(text)["variant"] == "opponent"
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    cfg = load_config(path, {"reps": "3", "seed": None})
    assert (cfg.variant, cfg.schedule, cfg.reps, cfg.seed, cfg.scales) == ("opponent", "fixed:2:50", 3, 0, (1.0, 2.0))
    assert cfg.detector.scales == (1.0, 2.0)


@pytest.mark.parametrize(
    "values",
    [{"colour": "red"}, {"reps": "0"}, {"preset": "Z"}, {"schedule": "eq3"}, {"combine": "max"}, {"variant": "surf"}],
)
def test_config_errors(values):
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping(values)
    with pytest.raises(ValueError):
        parse_config_text("just words")


@pytest.mark.parametrize("name", ["caltech101.cfg", "desk.cfg"])
def test_shipped_configs_parse(name):
    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    assert cfg.dataset and cfg.out


def test_default_config_is_the_full_protocol():
    cfg = ExperimentConfig()
    assert (cfg.n_train, cfg.n_test, cfg.reps, cfg.schedule, cfg.variant, cfg.preset) == (
        30, 50, 4, "eq2", "transformed", "B",
    )


def test_cumulative_curve():
    p1 = np.array([[0.9, 0.1], [0.6, 0.4]])
    p2 = np.array([[0.8, 0.2], [0.1, 0.9]])
    assert cumulative_curve([p1, p2], np.array([0, 1])) == [0.5, 1.0]


def test_report_mean_and_csv():
    report = Report([0.5, 0.75, 1.0, 0.25], [[0.5], [0.75], [1.0], [0.25]], {"reps": 4})
    assert report.mean_accuracy == (0.5 + 0.75 + 1.0 + 0.25) / 4
    lines = report.to_csv().splitlines()
    assert lines[0] == "repetition,members,accuracy"
    assert lines[1:5] == ["0,1,0.5", "1,1,0.75", "2,1,1.0", "3,1,0.25"]
    assert lines[5] == "mean,1,0.625"
    assert "62.50%" in report.to_text()


def quick_config(root, **kw):
    base = dict(dataset=str(root), variant="sift", schedule="fixed:1:30", n_train=4, n_test=4, reps=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_minimal_run(small_dataset):
    report = run_experiment(quick_config(small_dataset))
    assert len(report.accuracies) == 1 and len(report.curves[0]) == 1
    assert 0.0 <= report.accuracies[0] <= 1.0


def test_four_repetitions_average(small_dataset):
    report = run_experiment(quick_config(small_dataset, reps=4, schedule="fixed:2:20"))
    a = report.accuracies
    assert len(a) == 4
    assert report.mean_accuracy == pytest.approx((a[0] + a[1] + a[2] + a[3]) / 4, abs=1e-15)
    assert all(len(c) == 2 for c in report.curves)
    assert [c[-1] for c in report.curves] == a


def test_runs_are_reproducible(small_dataset, tmp_path):
    cfg = quick_config(small_dataset, reps=2, schedule="fixed:2:20", cache=str(tmp_path / "cache"))
    first = run_experiment(cfg)
    second = run_experiment(cfg)  # served from the feature cache
    assert first.to_csv() == second.to_csv()
    assert first.config == second.config


def test_cli_roundtrip(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--classes", "3", "--per-class", "8", "--size", "64"]) == 0
    assert main(["scan", "--dataset", str(data)]) == 0
    assert "3 classes, 24 images" in capsys.readouterr().out

    cache = tmp_path / "cache"
    assert main(["extract", "--dataset", str(data), "--variant", "transformed", "--cache", str(cache)]) == 0
    assert len(list(cache.glob("features-transformed-*.sspmfc"))) == 1

    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        f"dataset = {data}\nvariant = transformed\nschedule = fixed:2:20\nn_train = 4\nn_test = 4\n"
        f"reps = 2\ncache = {cache}\n"
    )
    model = tmp_path / "model"
    assert main(["train", "--config", str(cfg), "--out", str(model)]) == 0
    assert (model / "manifest.json").exists() and (model / "split.json").exists()
    assert main(["evaluate", "--model", str(model)]) == 0
    out = capsys.readouterr().out
    assert "members=2" in out and "accuracy:" in out

    rep = tmp_path / "rep"
    assert main(["experiment", "--config", str(cfg), "--preset", "A", "--combine", "mean", "--out", str(rep)]) == 0
    csv_text = (rep / "report.csv").read_text()
    assert csv_text.splitlines()[0] == "repetition,members,accuracy"
    assert len(csv_text.splitlines()) == 1 + 2 * 2 + 2
    assert "preset = A" in (rep / "report.txt").read_text()


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["scan", "--dataset", str(tmp_path / "missing")]) == 2
    assert "error:" in capsys.readouterr().err
