"""Error metrics: centre-aligned distances, marker angles, surface distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError
from .graft_model import Mesh


def center_align(cloud_a, cloud_b):
    """Translate `cloud_a` so its centroid coincides with that of `cloud_b`."""
    a = np.asarray(cloud_a, dtype=float)
    b = np.asarray(cloud_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DegenerateGeometryError("cannot align an empty point cloud")
    return a + (b.mean(axis=0) - a.mean(axis=0))


def _dot(u, v):
    return np.einsum("ij,ij->i", u, v)


def closest_point_on_triangles(p, a, b, c):
    """Row-wise closest point of triangle (a, b, c) to p; all arrays (N, 3).

    Voronoi-region walk over vertices, edges and face (Ericson).
    """
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        out = a + ab * (vb * denom)[:, None] + ac * (vc * denom)[:, None]
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        out[m] = (b + (c - b) * w[:, None])[m]
        w = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out[m] = (a + ac * w[:, None])[m]
        m = (d6 >= 0) & (d5 <= d6)
        out[m] = c[m]
        v = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out[m] = (a + ab * v[:, None])[m]
        m = (d3 >= 0) & (d4 <= d3)
        out[m] = b[m]
        m = (d1 <= 0) & (d2 <= 0)
        out[m] = a[m]
    return out


def unsigned_distances(points, mesh: Mesh, k=16):
    """Distance from each point to the nearest triangle of `mesh`.

    Candidate triangles come from KD-trees on triangle centroids, one tree
    per size class. A triangle whose centroid is farther than the current
    best distance plus its circumscribing radius cannot be nearer, so the
    k-nearest candidate set is widened until that bound closes.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if len(mesh.faces) == 0:
        raise DegenerateGeometryError("mesh has no faces")
    tri = mesh.vertices[mesh.faces]
    cent = tri.mean(axis=1)
    radius = np.linalg.norm(tri - cent[:, None, :], axis=-1).max(axis=1)
    best, _ = cKDTree(mesh.vertices[np.unique(mesh.faces)]).query(P)
    # size classes: radii within a factor of two share a bound
    r0 = max(radius.min(), 1e-12)
    cls = np.floor(np.log2(np.maximum(radius, r0) / r0)).astype(int)
    for c_id in np.unique(cls):
        sel = np.flatnonzero(cls == c_id)
        best = np.minimum(best, _class_distances(P, tri[sel], cent[sel], radius[sel].max(), best, k))
    return best


def _class_distances(P, tri, cent, rmax, upper, k):
    tree = cKDTree(cent)
    dist = np.full(len(P), np.inf)
    d1, _ = tree.query(P)
    todo = np.flatnonzero(d1 - rmax <= upper)
    while len(todo):
        kk = min(k, len(cent))
        dc, idx = tree.query(P[todo], k=kk)
        dc, idx = dc.reshape(len(todo), kk), idx.reshape(len(todo), kk)
        Q = np.repeat(P[todo], kk, axis=0)
        a, b, c = (tri[idx.ravel(), j] for j in range(3))
        q = closest_point_on_triangles(Q, a, b, c)
        d = np.linalg.norm(q - Q, axis=1).reshape(len(todo), kk).min(axis=1)
        done = (kk == len(cent)) | (dc[:, -1] - rmax > np.minimum(d, upper[todo]))
        dist[todo[done]] = d[done]
        todo = todo[~done]
        k *= 2
    return dist


def mean_unsigned_distance(points, reference_mesh: Mesh):
    """(mean, standard deviation) of point-to-surface distances, mm."""
    d = unsigned_distances(points, reference_mesh)
    return float(d.mean()), float(d.std())


def cylindrical_angle(points, frame):
    """Angle (deg) of points about the z axis of `frame` (a pose: local -> world)."""
    local = (np.atleast_2d(points) - frame.translation) @ frame.rotation / frame.scale
    r = np.hypot(local[:, 0], local[:, 1])
    if np.any(r < 1e-12):
        raise DegenerateGeometryError("marker lies on the device axis; its angle is undefined")
    return np.rad2deg(np.arctan2(local[:, 1], local[:, 0]))


def wrap_angle_error(a, b):
    """|a - b| wrapped onto [0, 180] degrees."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def angular_error(marker_inst, marker_truth, axis_frame):
    """Unsigned difference of the markers' cylindrical angles in `axis_frame`, degrees."""
    return wrap_angle_error(cylindrical_angle(marker_inst, axis_frame), cylindrical_angle(marker_truth, axis_frame))


def _stats(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    return float(x.mean()), float(x.std())


@dataclass
class ErrorReport:
    """Per-marker and per-vertex errors of one instantiation."""

    marker_distances: np.ndarray
    angular_errors: np.ndarray
    vertex_distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    solve_times_ms: list = field(default_factory=list)
    view_angle: float | None = None
    trial: int | None = None

    @property
    def marker_mean(self):
        return _stats(self.marker_distances)[0]

    @property
    def marker_std(self):
        return _stats(self.marker_distances)[1]

    @property
    def angular_mean(self):
        return _stats(self.angular_errors)[0]

    @property
    def angular_std(self):
        return _stats(self.angular_errors)[1]

    @property
    def shape_mean(self):
        return _stats(self.vertex_distances)[0]

    @property
    def shape_std(self):
        return _stats(self.vertex_distances)[1]

    def summary(self):
        return {
            "view_angle": self.view_angle,
            "trial": self.trial,
            "marker_mean_mm": self.marker_mean,
            "marker_std_mm": self.marker_std,
            "marker_max_mm": float(np.max(self.marker_distances)) if len(self.marker_distances) else float("nan"),
            "angular_mean_deg": self.angular_mean,
            "angular_std_deg": self.angular_std,
            "shape_mean_mm": self.shape_mean,
            "shape_std_mm": self.shape_std,
        }


def marker_report(inst_markers, truth_markers, truth_frames, segments):
    """Centre-aligned marker distances and angles.

    `truth_frames[k]` is the ground-truth pose of segment k, used as the
    cylindrical frame for the angle of every marker on that segment.
    """
    inst = center_align(inst_markers, truth_markers)
    truth = np.asarray(truth_markers, dtype=float)
    dist = np.linalg.norm(inst - truth, axis=1)
    segments = np.asarray(segments)
    ang = np.empty(len(truth))
    for k in np.unique(segments):
        sel = segments == k
        ang[sel] = angular_error(inst[sel], truth[sel], truth_frames[k])
    return dist, ang


def shape_distances(inst_mesh: Mesh, truth_mesh: Mesh):
    """Instantiated vertices, centre-aligned, to the ground-truth surface."""
    verts = center_align(inst_mesh.vertices, truth_mesh.vertices)
    return unsigned_distances(verts, truth_mesh)
