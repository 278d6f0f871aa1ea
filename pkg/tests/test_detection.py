import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stentshape.detection import (
    LossParams,
    cross_entropy,
    detect_markers,
    focal_loss,
    iou,
    marker_mask,
    p_t,
    read_detections_csv,
    weighted_loss,
    write_detections_csv,
)
from stentshape.projection import FluoroImage, camera_for_view, project, render_fluoro

GRID = np.linspace(1e-4, 1.0, 10_000)


@pytest.mark.parametrize("p,y,want", [(0.9, 1, 0.9), (0.9, 0, 0.1), (0.5, 1, 0.5), (0.5, 0, 0.5)])
def test_p_t(p, y, want):
    assert p_t(p, y) == pytest.approx(want)


def test_p_t_range():
    with pytest.raises(ValueError):
        p_t(1.2, 1)


@pytest.mark.parametrize("pt,want", [(1.0, 0.0), (0.5, math.log(2)), (math.exp(-1), 1.0)])
def test_cross_entropy(pt, want):
    assert cross_entropy(pt) == pytest.approx(want, abs=1e-15)


def test_cross_entropy_clamped():
    assert np.isfinite(cross_entropy(0.0))


def test_weighted():
    assert weighted_loss(0.5, 1) == pytest.approx(30 * math.log(2), abs=1e-12)
    np.testing.assert_allclose(weighted_loss(GRID, np.zeros_like(GRID)), cross_entropy(GRID))
    assert weighted_loss(1.0, 1) == 0.0


def test_focal_values():
    assert focal_loss(1.0, 1) == 0.0
    assert focal_loss(0.5, 1) == pytest.approx(30 * 0.25 * math.log(2), abs=1e-12)


@given(st.floats(0.0, 5.0))
def test_focal_below_weighted(gamma):
    params = LossParams(30.0, 1.0, gamma)
    for y in (0, 1):
        yy = np.full_like(GRID, y)
        assert np.all(focal_loss(GRID, yy, params) <= weighted_loss(GRID, yy, params) + 1e-15)


def test_gamma_zero_equivalence():
    params = LossParams(30.0, 1.0, 0.0)
    y = (GRID > 0.5).astype(int)
    assert np.array_equal(focal_loss(GRID, y, params), weighted_loss(GRID, y, params))


@pytest.mark.parametrize("fn", [cross_entropy, lambda p: weighted_loss(p, 1), lambda p: focal_loss(p, 1)])
def test_losses_decrease(fn):
    assert np.all(np.diff(fn(GRID)) <= 0)


def test_loss_params_validation():
    with pytest.raises(ValueError):
        LossParams(0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        LossParams(30.0, 1.0, -1.0)


def test_iou_cases():
    a = np.zeros((10, 10), bool)
    a[2:6, 2:6] = True
    b = np.zeros_like(a)
    b[1:7, 1:7] = True
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    assert iou(a, b) == pytest.approx(16 / 36)
    assert iou(np.zeros_like(a), np.zeros_like(a)) == 1.0
    with pytest.raises(ValueError):
        iou(a, a[:5])


@given(st.integers(0, 2**32 - 1))
def test_iou_symmetric_bounded(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((8, 8)) > 0.5, r.random((8, 8)) > 0.5
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_blank_image():
    assert detect_markers(np.zeros((64, 64))) == []


def test_single_blob():
    cam = camera_for_view(0.0)
    p = np.array([[12.3, 0.0, -7.7]])
    dets = detect_markers(render_fluoro(cam, p))
    assert len(dets) == 1
    assert np.linalg.norm(dets[0].centroid - project(cam, p)[0]) < 0.5


def test_full_device_no_misses(markers, camera):
    img = render_fluoro(camera, markers.reference())
    dets = detect_markers(img)
    assert len(dets) == 30
    uv = project(camera, markers.reference())
    d = np.linalg.norm(np.array([x.centroid for x in dets])[:, None] - uv[None], axis=-1)
    assert np.all(d.min(axis=0) < 0.5)


def test_area_filter_drops_speckle():
    img = np.zeros((64, 64))
    img[10, 10] = 1.0
    img[30:36, 30:36] = 1.0
    dets = detect_markers(img, intensity_threshold=0.5)
    assert len(dets) == 1
    assert dets[0].area == 36


@pytest.mark.parametrize("shift", [(3, 5), (-7, 2), (0, -11)])
def test_translation_equivariance(shift):
    img = np.zeros((96, 96))
    mask = marker_mask(img.shape, [(40.3, 41.7), (60.0, 30.2)], 2.0)
    img[mask] = 1.0
    a = detect_markers(img)
    b = detect_markers(np.roll(img, shift[::-1], axis=(0, 1)))
    ca = sorted((d.u + shift[0], d.v + shift[1]) for d in a)
    cb = sorted((d.u, d.v) for d in b)
    np.testing.assert_allclose(ca, cb, atol=1e-9)


def test_detections_csv(tmp_path):
    img = FluoroImage(marker_mask((64, 64), [(20, 20), (40, 44)], 2.5).astype(float))
    dets = detect_markers(img)
    write_detections_csv(tmp_path / "d.csv", dets, [0, 0], [1, 2])
    back, segs, types = read_detections_csv(tmp_path / "d.csv")
    assert back == dets and segs == [0, 0] and types == [1, 2]
