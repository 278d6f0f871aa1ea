"""Marker placement on stent segments and 2D/3D correspondence bookkeeping."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import CorrespondenceError, DegenerateGeometryError

N_TYPES = 5

# (angle deg, fraction of segment height) per marker type 1..5. Types 1 and 2
# share an angle and span the segment vertically, so their edge is parallel to
# the device axis. Picked by random search over a 15 deg / 0.1 grid: largest
# coplanarity margin (8.1 mm on the default device) among patterns keeping all
# 30 markers >= 6 px apart in every one of the 13 C-arm views.
DEFAULT_PATTERN = ((240.0, 0.1), (240.0, 0.9), (15.0, 0.3), (150.0, 0.5), (345.0, 0.7))


@dataclass(frozen=True)
class Marker:
    id: int
    segment_index: int
    type_label: int
    position_ref: np.ndarray
    position_target: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= self.type_label <= N_TYPES:
            raise ValueError(f"marker type must be in 1..{N_TYPES}, got {self.type_label}")


@dataclass(frozen=True)
class MarkerSet:
    markers: tuple

    def __len__(self):
        return len(self.markers)

    def __iter__(self):
        return iter(self.markers)

    @property
    def n_segments(self):
        return 1 + max(m.segment_index for m in self.markers)

    def reference(self):
        return np.array([m.position_ref for m in self.markers])

    def target(self):
        if any(m.position_target is None for m in self.markers):
            raise ValueError("marker set has no deployed positions")
        return np.array([m.position_target for m in self.markers])

    def segment(self, k):
        """Markers of segment k sorted by type label."""
        return sorted((m for m in self.markers if m.segment_index == k), key=lambda m: m.type_label)

    def segments(self):
        return np.array([m.segment_index for m in self.markers])

    def types(self):
        return np.array([m.type_label for m in self.markers])

    def with_targets(self, targets):
        return MarkerSet(tuple(replace(m, position_target=np.asarray(t, dtype=float))
                               for m, t in zip(self.markers, targets)))

    def to_dict(self):
        rows = []
        for m in self.markers:
            row = {"id": m.id, "segment": m.segment_index, "type": m.type_label,
                   "xyz": [float(c) for c in m.position_ref]}
            if m.position_target is not None:
                row["xyz_target"] = [float(c) for c in m.position_target]
            rows.append(row)
        return {"markers": rows}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(
            Marker(r["id"], r["segment"], r["type"], np.asarray(r["xyz"], dtype=float),
                   None if "xyz_target" not in r else np.asarray(r["xyz_target"], dtype=float))
            for r in d["markers"]))

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def coplanarity_margin(points):
    """Smallest singular value of the centred point matrix."""
    P = np.asarray(points, dtype=float)
    return float(np.linalg.svd(P - P.mean(axis=0), compute_uv=False)[-1])


def place_markers(spec, pattern=DEFAULT_PATTERN):
    """Five typed markers per stent segment, on the graft surface."""
    if len(pattern) != N_TYPES:
        raise ValueError(f"pattern must give {N_TYPES} (angle, height fraction) pairs")
    markers, next_id = [], 0
    for k, ((z0, z1), seg) in enumerate(zip(spec.segment_bounds(), spec.segments)):
        pts = []
        for angle, frac in pattern:
            a = np.deg2rad(angle)
            pts.append([seg.graft_radius * np.cos(a), seg.graft_radius * np.sin(a), z0 + frac * (z1 - z0)])
        pts = np.array(pts)
        if len(np.unique(np.round(pts, 9), axis=0)) < N_TYPES:
            raise DegenerateGeometryError(f"segment {k}: pattern yields coincident markers")
        margin = coplanarity_margin(pts)
        if margin <= 1e-6 * seg.graft_radius:
            raise DegenerateGeometryError(
                f"segment {k}: marker pattern is coplanar (margin {margin:.3g} mm)")
        for t, p in enumerate(pts, start=1):
            markers.append(Marker(next_id, k, t, p))
            next_id += 1
    return MarkerSet(tuple(markers))


def assign_by_vertical_position(detections, n_segments, per_segment=N_TYPES):
    """Split detections into segment groups by image row, bottom segment first.

    Image rows grow downward, so the bottom segment holds the `per_segment`
    detections with the largest v. Returns a list of index arrays.
    """
    pts = np.asarray([getattr(d, "centroid", d) for d in detections], dtype=float).reshape(-1, 2)
    if len(pts) != per_segment * n_segments:
        raise CorrespondenceError(
            f"expected {per_segment * n_segments} detections for {n_segments} segments, got {len(pts)}")
    order = np.argsort(-pts[:, 1], kind="stable")
    return [order[k * per_segment:(k + 1) * per_segment] for k in range(n_segments)]


@dataclass(frozen=True)
class CorrespondenceSet:
    """Reference 3D markers of one segment with their 2D projections (px)."""

    markers: tuple
    projections: np.ndarray

    def __post_init__(self):
        proj = np.asarray(self.projections, dtype=float).reshape(-1, 2)
        if len(proj) != len(self.markers):
            raise CorrespondenceError("one projection per marker required")
        if len(proj) < 4:
            raise CorrespondenceError(f"at least 4 correspondences needed, got {len(proj)}")
        if not np.all(np.isfinite(proj)):
            raise CorrespondenceError("non-finite projection")
        object.__setattr__(self, "projections", proj)

    @property
    def reference(self):
        return np.array([m.position_ref for m in self.markers])


def write_markers_csv(path, uv, segments=None, types=None):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["u", "v", "segment", "type"])
        for i, (u, v) in enumerate(np.asarray(uv)):
            wr.writerow([repr(float(u)), repr(float(v)),
                         "" if segments is None else int(segments[i]),
                         "" if types is None else int(types[i])])
