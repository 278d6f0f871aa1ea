"""Synthetic ground truth and the end-to-end instantiation pipeline.

A deformation script moves every stent segment rigidly: an axis-angle
rotation about the segment's mid-axis point, a translation, and a twist
about the segment's own axis. The ground-truth shape is the continuity-
corrected result, so a perfect pose solver reproduces it exactly.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CorrespondenceError, OutOfFrameError, SpecError, StentShapeError
from .evaluation import ErrorReport, marker_report, shape_distances
from .geometry import rot_z, rotvec_matrix, unit
from .graft_model import GraftSpec, Mesh, assemble_graft
from .instantiation import InstantiatedShape, instantiate_shape
from .markers import MarkerSet, place_markers
from .projection import CameraModel, camera_for_view, project
from .rpnp import PoseEstimate, rpnp_pose


@dataclass(frozen=True)
class SegmentMotion:
    """Rigid motion of one segment: rotation vector (deg), translation (mm), twist (deg)."""

    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    twist: float = 0.0

    def pose(self, pivot) -> PoseEstimate:
        pivot = np.asarray(pivot, dtype=float)
        R = rotvec_matrix(np.deg2rad(np.asarray(self.rotation, dtype=float))) @ rot_z(np.deg2rad(self.twist))
        return PoseEstimate(R, pivot - R @ pivot + np.asarray(self.translation, dtype=float))

    def to_dict(self):
        return {"rotation": [float(v) for v in self.rotation],
                "translation": [float(v) for v in self.translation],
                "twist": float(self.twist)}

    @classmethod
    def from_dict(cls, d):
        rot = tuple(float(v) for v in d.get("rotation", (0.0, 0.0, 0.0)))
        trans = tuple(float(v) for v in d.get("translation", (0.0, 0.0, 0.0)))
        if len(rot) != 3 or len(trans) != 3:
            raise SpecError("rotation and translation need three components")
        return cls(rot, trans, float(d.get("twist", 0.0)))


@dataclass(frozen=True)
class Deformation:
    motions: tuple

    @classmethod
    def identity(cls, n_segments):
        return cls(tuple(SegmentMotion() for _ in range(n_segments)))

    @classmethod
    def random(cls, n_segments, rng, max_rotation_deg=15.0, max_translation=5.0, max_twist_deg=10.0):
        motions = []
        for _ in range(n_segments):
            axis = unit(rng.normal(size=3))
            trans = unit(rng.normal(size=3)) * rng.uniform(0.0, max_translation)
            motions.append(SegmentMotion(
                tuple(axis * rng.uniform(0.0, max_rotation_deg)), tuple(trans),
                float(rng.uniform(-max_twist_deg, max_twist_deg))))
        return cls(tuple(motions))

    def to_list(self):
        return [m.to_dict() for m in self.motions]

    @classmethod
    def from_list(cls, rows):
        return cls(tuple(SegmentMotion.from_dict(r) for r in rows))


def segment_pivots(spec: GraftSpec):
    return np.array([[0.0, 0.0, 0.5 * (z0 + z1)] for z0, z1 in spec.segment_bounds()])


def raw_poses(spec: GraftSpec, deformation: Deformation):
    if len(deformation.motions) != spec.n_segments:
        raise SpecError(f"deformation has {len(deformation.motions)} entries for {spec.n_segments} segments")
    return [m.pose(c) for m, c in zip(deformation.motions, segment_pivots(spec))]


@dataclass(frozen=True)
class GroundTruth:
    spec: GraftSpec
    markers: MarkerSet  # with deployed targets
    shape: InstantiatedShape

    @property
    def poses(self):
        return [sp.pose for sp in self.shape.segment_poses]

    @property
    def mesh(self) -> Mesh:
        return self.shape.mesh


def ground_truth(spec: GraftSpec, deformation: Deformation, markers: MarkerSet | None = None,
                 reference: Mesh | None = None) -> GroundTruth:
    markers = markers if markers is not None else place_markers(spec)
    shape = instantiate_shape(raw_poses(spec, deformation), spec, reference)
    segs = markers.segments()
    P = markers.reference()
    targets = np.empty_like(P)
    for k, sp in enumerate(shape.segment_poses):
        targets[segs == k] = sp.pose.apply(P[segs == k])
    return GroundTruth(spec, markers.with_targets(targets), shape)


def check_in_frame(camera: CameraModel, uv, margin=0.0):
    uv = np.asarray(uv, dtype=float)
    out = np.flatnonzero((uv[:, 0] < margin) | (uv[:, 1] < margin)
                         | (uv[:, 0] > camera.width - margin) | (uv[:, 1] > camera.height - margin))
    if out.size:
        raise OutOfFrameError(f"markers {out.tolist()} project outside the {camera.width}x{camera.height} image")
    return uv


def simulate_projections(truth: GroundTruth, camera: CameraModel, noise_sigma=0.0, rng=None):
    """Pixel projections of the deployed markers, in marker order, with optional Gaussian noise."""
    uv = project(camera, truth.markers.target())
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        uv = uv + rng.normal(0.0, noise_sigma, uv.shape)
    return uv


def label_detections(detected_uv, expected_uv, segments, types, max_px=5.0):
    """Give each detection the segment/type of its nearest expected projection.

    One-to-one matching (Hungarian). Expected markers left without a
    detection within `max_px` raise a `CorrespondenceError` naming their
    segments.
    """
    D = np.asarray(detected_uv, dtype=float).reshape(-1, 2)
    E = np.asarray(expected_uv, dtype=float).reshape(-1, 2)
    cost = np.linalg.norm(D[:, None, :] - E[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    ok = cost[rows, cols] <= max_px
    rows, cols = rows[ok], cols[ok]
    missing = np.setdiff1d(np.arange(len(E)), cols)
    if missing.size:
        segs = sorted({int(segments[i]) for i in missing})
        raise CorrespondenceError(
            f"{missing.size} marker(s) not detected; affected segment(s): {segs}")
    if len(D) > len(E):
        raise CorrespondenceError(f"{len(D) - len(E)} spurious detection(s)")
    order = np.argsort(cols)
    return D[rows[order]], np.asarray(segments)[cols[order]], np.asarray(types)[cols[order]]


def shuffle_labels(types, segments, rng, n_swaps=1):
    """Swap the type labels of two markers within randomly chosen segments."""
    types = np.array(types, copy=True)
    segments = np.asarray(segments)
    for _ in range(n_swaps):
        k = rng.choice(np.unique(segments))
        i, j = rng.choice(np.flatnonzero(segments == k), size=2, replace=False)
        types[i], types[j] = types[j], types[i]
    return types


@dataclass
class PipelineResult:
    shape: InstantiatedShape
    poses: list
    solve_times_ms: list = field(default_factory=list)


def solve_segments(markers: MarkerSet, uv, camera: CameraModel, segments=None, types=None, threads=1):
    """One RPnP pose per segment from labelled projections.

    Row i of `uv` carries label (segments[i], types[i]); labels default to
    the marker set's own order. Returns (poses, per-segment wall times ms).
    """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    segments = markers.segments() if segments is None else np.asarray(segments)
    types = markers.types() if types is None else np.asarray(types)
    n = markers.n_segments
    lookup = {(m.segment_index, m.type_label): m.position_ref for m in markers}

    def solve(k):
        rows = np.flatnonzero(segments == k)
        if len(rows) < 4:
            raise CorrespondenceError(f"segment {k}: {len(rows)} labelled marker(s), need >= 4")
        if len(set(types[rows].tolist())) != len(rows):
            raise CorrespondenceError(f"segment {k}: duplicate marker labels")
        try:
            P = np.array([lookup[(k, int(t))] for t in types[rows]])
        except KeyError as e:
            raise CorrespondenceError(f"segment {k}: unknown marker label {e.args[0]}") from None
        t0 = time.perf_counter()
        pose = rpnp_pose(P, uv[rows], camera)
        return pose, 1e3 * (time.perf_counter() - t0)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(solve, range(n)))
    else:
        out = [solve(k) for k in range(n)]
    return [o[0] for o in out], [o[1] for o in out]


def run_pipeline(spec: GraftSpec, markers: MarkerSet, uv, camera: CameraModel, reference: Mesh | None = None,
                 segments=None, types=None, threads=1) -> PipelineResult:
    poses, times = solve_segments(markers, uv, camera, segments, types, threads)
    return PipelineResult(instantiate_shape(poses, spec, reference), poses, times)


def evaluate(result: PipelineResult, truth: GroundTruth, with_shape=True, view_angle=None, trial=None) -> ErrorReport:
    inst = np.empty_like(truth.markers.reference())
    segs = truth.markers.segments()
    P = truth.markers.reference()
    for k, sp in enumerate(result.shape.segment_poses):
        inst[segs == k] = sp.pose.apply(P[segs == k])
    dist, ang = marker_report(inst, truth.markers.target(), truth.poses, segs)
    vd = shape_distances(result.shape.mesh, truth.mesh) if with_shape else np.zeros(0)
    return ErrorReport(dist, ang, vd, list(result.solve_times_ms), view_angle, trial)


def view_sweep(spec: GraftSpec, deformation: Deformation, angles=None, noise_sigma=0.0, seed=0, n_trials=1,
               markers: MarkerSet | None = None, camera_kwargs=None, with_shape=True, threads=1):
    """Full pipeline at every view angle; reports in view order, then trial order.

    Each (view, trial) draws its noise from its own child seed, so results do
    not depend on `threads`.
    """
    from .projection import VIEW_ANGLES

    angles = VIEW_ANGLES if angles is None else tuple(angles)
    markers = markers if markers is not None else place_markers(spec)
    camera_kwargs = dict(camera_kwargs or {})
    camera_kwargs.setdefault("center", (0.0, 0.0, spec.total_height / 2))
    reference = assemble_graft(spec)
    truth = ground_truth(spec, deformation, markers, reference)
    seeds = np.random.SeedSequence(seed).spawn(len(angles) * n_trials)

    def one(i):
        v, trial = divmod(i, n_trials)
        angle = angles[v]
        try:
            cam = camera_for_view(angle, **camera_kwargs)
            uv = check_in_frame(cam, simulate_projections(truth, cam, noise_sigma, np.random.default_rng(seeds[i])))
            res = run_pipeline(spec, markers, uv, cam, reference)
            return evaluate(res, truth, with_shape, angle, trial)
        except StentShapeError as e:
            raise type(e)(f"view {angle:g} deg, trial {trial}: {e}") from e

    idx = range(len(angles) * n_trials)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, idx))
    return [one(i) for i in idx]


REPORT_COLUMNS = ("view_angle", "trial", "marker_mean_mm", "marker_std_mm", "marker_max_mm",
                  "angular_mean_deg", "angular_std_deg", "shape_mean_mm", "shape_std_mm")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def reports_to_csv(reports, columns=REPORT_COLUMNS):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in reports:
        s = r.summary() if isinstance(r, ErrorReport) else r
        wr.writerow([_fmt(s[c]) for c in columns])
    return buf.getvalue()


def random_rigid(rng, max_rotation_deg=45.0, max_translation=100.0):
    """Rigid pose with uniformly random axis, angle in [0, max] and translation length in [0, max]."""
    R = rotvec_matrix(unit(rng.normal(size=3)) * np.deg2rad(rng.uniform(0.0, max_rotation_deg)))
    t = unit(rng.normal(size=3)) * rng.uniform(0.0, max_translation)
    return PoseEstimate(R, t)


MC_COLUMNS = ("trial", "view_angle", "noise_sigma", "marker_mean_mm", "marker_max_mm",
              "angular_mean_deg", "angular_max_deg", "shape_mean_mm")


def monte_carlo(spec: GraftSpec, n_trials, seed=0, noise_sigma=0.0, views=None, markers: MarkerSet | None = None,
                camera_kwargs=None, deformation_bounds=None, with_shape=False, threads=1):
    """Randomized deformations, views and noise; one summary row per trial.

    Trial i uses child seed i of `seed`, so rows are identical for any
    thread count.
    """
    from .projection import VIEW_ANGLES

    if n_trials < 1:
        raise SpecError("n_trials must be >= 1")
    views = VIEW_ANGLES if views is None else tuple(views)
    markers = markers if markers is not None else place_markers(spec)
    camera_kwargs = dict(camera_kwargs or {})
    camera_kwargs.setdefault("center", (0.0, 0.0, spec.total_height / 2))
    bounds = dict(deformation_bounds or {})
    reference = assemble_graft(spec)
    seeds = np.random.SeedSequence(seed).spawn(n_trials)

    def one(i):
        rng = np.random.default_rng(seeds[i])
        deformation = Deformation.random(spec.n_segments, rng, **bounds)
        angle = float(views[rng.integers(len(views))])
        try:
            truth = ground_truth(spec, deformation, markers, reference)
            cam = camera_for_view(angle, **camera_kwargs)
            uv = check_in_frame(cam, simulate_projections(truth, cam, noise_sigma, rng))
            rep = evaluate(run_pipeline(spec, markers, uv, cam, reference), truth, with_shape, angle, i)
        except StentShapeError as e:
            raise type(e)(f"trial {i} (view {angle:g} deg): {e}") from e
        return {
            "trial": i, "view_angle": angle, "noise_sigma": float(noise_sigma),
            "marker_mean_mm": rep.marker_mean, "marker_max_mm": float(rep.marker_distances.max()),
            "angular_mean_deg": rep.angular_mean, "angular_max_deg": float(rep.angular_errors.max()),
            "shape_mean_mm": rep.shape_mean if with_shape else None,
        }

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(n_trials)))
    return [one(i) for i in range(n_trials)]
