"""Marker segmentation on synthetic fluoroscopy, plus the segmentation losses.

The learned segmenter is replaced here by threshold + connected components;
the class-imbalance losses are provided as plain array functions so they can
be checked and tabulated independently of any network.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.segmentation import expand_labels

_EPS = 1e-12


@dataclass(frozen=True)
class LossParams:
    w_foreground: float = 30.0
    w_background: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.w_foreground <= 0 or self.w_background <= 0:
            raise ValueError("class weights must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def p_t(p, y):
    """Probability assigned to the true class: p for foreground, 1 - p otherwise."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return np.where(np.asarray(y) == 1, p, 1.0 - p)


def cross_entropy(pt):
    return -np.log(np.maximum(np.asarray(pt, dtype=float), _EPS))


def _class_weight(y, params):
    return np.where(np.asarray(y) == 1, params.w_foreground, params.w_background)


def weighted_loss(pt, y, params=LossParams()):
    return _class_weight(y, params) * cross_entropy(pt)


def focal_loss(pt, y, params=LossParams()):
    pt = np.asarray(pt, dtype=float)
    modulating = (1.0 - pt) ** params.gamma
    return _class_weight(y, params) * modulating * cross_entropy(pt)


def iou(pred, truth):
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def marker_mask(shape, centers, radius):
    """Ground-truth segmentation: pixels whose centre lies within `radius` of a marker."""
    h, w = shape
    vv, uu = np.mgrid[0:h, 0:w]
    mask = np.zeros(shape, dtype=bool)
    for u, v in np.atleast_2d(centers):
        mask |= (uu - u) ** 2 + (vv - v) ** 2 <= radius ** 2
    return mask


@dataclass(frozen=True)
class Detection:
    u: float
    v: float
    area: int

    @property
    def centroid(self):
        return np.array([self.u, self.v])


_EIGHT = np.ones((3, 3), dtype=int)


def segment(intensities, intensity_threshold=None):
    img = np.asarray(intensities, dtype=float)
    if intensity_threshold is None:
        if img.max() == img.min():
            return np.zeros(img.shape, dtype=bool)
        intensity_threshold = threshold_otsu(img)
    return img > intensity_threshold


def detect_markers(image, intensity_threshold=None, min_area_px=3, max_area_px=200, halo_px=2):
    """Threshold, label 8-connected blobs, filter by area, take weighted centroids.

    Centroids are intensity-weighted over each blob grown by `halo_px`
    pixels, which keeps the sub-threshold rim of the spot in the estimate.
    Detections are returned in row-major order of their labels.
    """
    img = np.asarray(getattr(image, "intensities", image), dtype=float)
    labels, n = ndimage.label(segment(img, intensity_threshold), structure=_EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(img), labels, idx)
    keep = (areas >= min_area_px) & (areas <= max_area_px)
    labels = np.where(np.isin(labels, idx[keep]), labels, 0)
    if halo_px:
        labels = expand_labels(labels, halo_px)
    out = []
    for lab, area in zip(idx[keep], areas[keep]):
        vs, us = np.nonzero(labels == lab)
        wgt = img[vs, us]
        total = wgt.sum()
        out.append(Detection(float(us @ wgt / total), float(vs @ wgt / total), int(area)))
    return out


def write_detections_csv(path, detections, segments=None, types=None):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["u", "v", "area", "segment", "type"])
        for i, d in enumerate(detections):
            seg = "" if segments is None else int(segments[i])
            typ = "" if types is None else int(types[i])
            wr.writerow([repr(d.u), repr(d.v), d.area, seg, typ])


def read_detections_csv(path):
    """Returns (detections, segments or None, types or None)."""
    dets, segs, types = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            dets.append(Detection(float(row["u"]), float(row["v"]), int(float(row.get("area") or 0))))
            segs.append(row.get("segment") or "")
            types.append(row.get("type") or "")
    segs = None if any(s == "" for s in segs) else [int(s) for s in segs]
    types = None if any(t == "" for t in types) else [int(t) for t in types]
    return dets, segs, types
