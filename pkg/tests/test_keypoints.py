import numpy as np
import pytest

from sspm.imgproc import gaussian_blur
from sspm.keypoints import DetectorParams, detect_harris_laplace, harris_response


@pytest.fixture
def square():
    im = np.zeros((100, 100))
    im[30:70, 30:70] = 1.0
    return im


@pytest.fixture
def texture():
    rng = np.random.default_rng(0)
    return gaussian_blur(rng.random((64, 80)), 1.5)


def test_constant_channel_has_no_keypoints():
    assert detect_harris_laplace(np.full((40, 40), 0.5)).shape == (0, 3)


def test_rejects_small_channel():
    with pytest.raises(ValueError):
        detect_harris_laplace(np.zeros((20, 40)))


def test_square_corners_fine_scales(square):
    params = DetectorParams(scales=(0.8, 1.0, 1.2))
    kps = detect_harris_laplace(square, params)
    corners = np.array([(30, 30), (69, 30), (30, 69), (69, 69)], float)
    assert len(kps) >= 4
    dist = np.hypot(kps[:, None, 0] - corners[:, 0], kps[:, None, 1] - corners[:, 1])
    assert (dist.min(axis=1) <= 3.0).all()
    assert set(dist.argmin(axis=1)) == {0, 1, 2, 3}


def test_square_keypoints_are_dense_harris_maxima(square):
    # oracle: brute-force argmax of the response in the quadrant holding each point
    kps = detect_harris_laplace(square)
    assert len(kps) >= 4
    for x, y, s in kps:
        resp = harris_response(square, s)
        ys = slice(0, 50) if y < 50 else slice(50, 100)
        xs = slice(0, 50) if x < 50 else slice(50, 100)
        iy, ix = np.unravel_index(np.argmax(resp[ys, xs]), resp[ys, xs].shape)
        assert (ix + xs.start, iy + ys.start) == (x, y)


def test_rotation_maps_keypoints(texture):
    a = detect_harris_laplace(texture)
    b = detect_harris_laplace(np.rot90(texture))
    assert len(a) == len(b) > 0
    width = texture.shape[1]
    mapped = np.column_stack([a[:, 1], width - 1 - a[:, 0], a[:, 2]])
    for x, y, s in mapped:
        d = np.hypot(b[:, 0] - x, b[:, 1] - y)
        j = np.argmin(d)
        assert d[j] <= 1.0 and b[j, 2] == s


def test_invariants(texture):
    params = DetectorParams(max_keypoints=10)
    kps = detect_harris_laplace(texture, params)
    assert len(kps) == 10
    np.testing.assert_array_equal(kps, detect_harris_laplace(texture, params))

    full = detect_harris_laplace(texture)
    np.testing.assert_array_equal(kps, full[:10])

    responses = np.array([harris_response(texture, s)[int(y), int(x)] for x, y, s in full])
    peak = max(harris_response(texture, s).max() for s in params.scales)
    assert (responses > params.harris_threshold * peak).all()
    assert (np.diff(responses) <= 0).all()
    h, w = texture.shape
    assert ((full[:, 0] >= 0) & (full[:, 0] < w) & (full[:, 1] >= 0) & (full[:, 1] < h)).all()
    assert set(full[:, 2]) <= set(params.scales)


def test_default_scales():
    np.testing.assert_allclose(DetectorParams().scales, [1.2 * 1.4**n for n in range(5)])


@pytest.mark.parametrize(
    "kwargs",
    [dict(scales=(2.0, 1.0)), dict(scales=()), dict(harris_threshold=-1), dict(laplace_threshold=-0.1)],
)
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        DetectorParams(**kwargs)


def test_digest_tracks_params():
    assert DetectorParams().digest() == DetectorParams().digest()
    assert DetectorParams().digest() != DetectorParams(max_keypoints=10).digest()
