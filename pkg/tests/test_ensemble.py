import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sspm.dataset import make_split, scan_dataset
from sspm.descriptors import ImageFeatures, Variant
from sspm.ensemble import SSPMClassifier, combine_predict, make_schedule, member_seed, train_ensemble


@pytest.mark.parametrize(
    "kind, expected",
    [
        ("eq1", [1000, 1000, 800, 800, 600, 600, 400, 400, 200, 200]),
        ("eq2", [1000] * 3 + [800] * 3 + [600] * 3 + [400] * 3 + [200] * 3),
        ("fixed:1:1000", [1000]),
        ("fixed:3:50", [50, 50, 50]),
        ("variable:10", [1000, 900, 800, 700, 600, 500, 400, 300, 200, 100]),
        ("variable:2", [1000, 900]),
        ([7, 5], [7, 5]),
    ],
)
def test_schedules(kind, expected):
    assert make_schedule(kind) == expected


@pytest.mark.parametrize("kind", ["variable:11", "fixed:0:5", "fixed:2", "kmeans", "fixed:a:3", []])
def test_bad_schedules(kind):
    with pytest.raises(ValueError):
        make_schedule(kind)


def test_combine_hand_example():
    out = combine_predict([[0.6, 0.4], [0.3, 0.7]])
    np.testing.assert_allclose(out, [0.18 / 0.46, 0.28 / 0.46], atol=1e-12)
    np.testing.assert_allclose(out, [0.3913, 0.6087], atol=1e-4)


def test_combine_single_member_identity():
    d = np.array([0.1, 0.7, 0.2])
    np.testing.assert_allclose(combine_predict([d]), d, atol=1e-15)


def test_combine_mean_rule():
    np.testing.assert_allclose(combine_predict([[0.6, 0.4], [0.3, 0.7]], "mean"), [0.45, 0.55])
    with pytest.raises(ValueError):
        combine_predict([[1.0]], "max")


def test_combine_underflow():
    d = np.full(4, 1e-50)
    d[0] = 1 - 3e-50
    out = combine_predict([np.roll(d, i % 4) for i in range(15)])
    assert np.isfinite(out).all()
    assert abs(out.sum() - 1) < 1e-9


def test_combine_batches():
    a = np.array([[0.6, 0.4], [0.5, 0.5]])
    b = np.array([[0.3, 0.7], [0.9, 0.1]])
    np.testing.assert_allclose(combine_predict([a, b])[0], combine_predict([a[0], b[0]]))


def test_combine_errors():
    with pytest.raises(ValueError):
        combine_predict([])
    with pytest.raises(ValueError):
        combine_predict([[0.5, 0.5], [0.2, 0.3, 0.5]])


dists = st.integers(2, 6).flatmap(
    lambda k: st.lists(
        st.lists(st.floats(1e-6, 1.0), min_size=k, max_size=k).map(lambda v: np.array(v) / sum(v)),
        min_size=1,
        max_size=6,
    )
)


@settings(max_examples=80, deadline=None)
@given(dists, st.randoms(use_true_random=False))
def test_combine_properties(members, rnd):
    out = combine_predict(members)
    assert abs(out.sum() - 1) < 1e-9 and (out >= 0).all()

    shuffled = list(members)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(combine_predict(shuffled), out, rtol=1e-9, atol=1e-15)

    perm = np.array(rnd.sample(range(len(out)), len(out)))
    np.testing.assert_allclose(combine_predict([m[perm] for m in members]), out[perm], rtol=1e-9, atol=1e-15)

    first = members[0]
    copies = combine_predict([first] * len(members))
    assert np.argmax(copies) == np.argmax(first)


def test_member_seeds():
    assert [member_seed(8, m) for m in range(4)] == [8, 9, 10, 11]
    assert member_seed(5, 1) == 4


def blob_features(rng, label, n=40):
    """Descriptors drawn around a class-specific mean, scattered over a 300x300 frame."""
    kps = np.column_stack([rng.uniform(0, 300, n), rng.uniform(0, 300, n), np.ones(n)])
    centre = np.zeros(16)
    centre[4 * label : 4 * label + 4] = 1.0
    desc = centre + 0.3 * rng.random((n, 16))
    return ImageFeatures(kps.astype(np.float32), desc.astype(np.float32), (300, 300), Variant.SIFT)


@pytest.fixture
def blobs():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(3), 10)
    return [blob_features(rng, c) for c in y], y


def test_classifier_on_precomputed_features(blobs):
    X, y = blobs
    clf = SSPMClassifier(schedule="fixed:3:20", geometry="A", random_state=4).fit(X, y)
    assert len(clf.members_) == 3
    assert [m.vocabulary.seed for m in clf.members_] == [4, 5, 6]
    assert [m.vocabulary.size for m in clf.members_] == [20, 20, 20]
    assert (clf.predict(X) == y).mean() == 1.0
    probs = clf.member_proba(X)
    assert len(probs) == 3 and probs[0].shape == (30, 3)
    np.testing.assert_allclose(clf.predict_proba(X), combine_predict(probs))
    vocabs = [m.vocabulary.words.tobytes() for m in clf.members_]
    assert len(set(vocabs)) == 3


def test_classifier_string_labels(blobs):
    X, y = blobs
    names = np.array(["cat", "dog", "emu"])[y]
    clf = SSPMClassifier(schedule="fixed:1:10").fit(X, names)
    assert set(clf.predict(X)) <= {"cat", "dog", "emu"}


def test_save_load_roundtrip(tmp_path, blobs):
    X, y = blobs
    clf = SSPMClassifier(schedule=[10, 8], random_state=3).fit(X, y)
    clf.save(tmp_path / "ens", class_names=["a", "b", "c"])
    back = SSPMClassifier.load(tmp_path / "ens")
    np.testing.assert_allclose(back.predict_proba(X), clf.predict_proba(X), atol=1e-12)
    assert back.class_names_ == ["a", "b", "c"]
    back.save(tmp_path / "again")
    for name in ["member-00.vocab", "member-01.vocab", "member-00.model", "member-01.model"]:
        assert (tmp_path / "ens" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_train_ensemble_from_split(small_dataset, tmp_path):
    split = make_split(scan_dataset(small_dataset), n_train=5, n_test=5, seed=0)
    a = train_ensemble(split, "sift", "B", "fixed:2:30", base_seed=7)
    b = train_ensemble(split, "sift", "B", "fixed:2:30", base_seed=7)
    assert [m.vocabulary.size for m in a.members_] == [30, 30]
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    acc = (a.predict(split.test_paths) == split.test_labels).mean()
    assert acc >= 0.8
