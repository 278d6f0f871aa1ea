"""Whole-graft shape from per-segment poses.

Segments move rigidly. Their positions are re-chained so consecutive
segments stay connected across each gap, and the fabric gaps are filled
with circles whose centre, normal, radius and twist are interpolated
between the neighbouring segment end circles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, SpecError
from .geometry import EZ, swing_twist
from .graft_model import HOLE, GraftSpec, Mesh, assemble_graft, level_layout
from .rpnp import PoseEstimate


@dataclass(frozen=True)
class CirclePlacement:
    center: np.ndarray
    normal: np.ndarray
    radius: float
    twist: float  # degrees

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise DegenerateGeometryError("circle normal vanishes")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")

    def to_dict(self):
        return {"center": self.center.tolist(), "normal": self.normal.tolist(),
                "radius": float(self.radius), "twist": float(self.twist)}


@dataclass(frozen=True)
class SegmentPose:
    segment_index: int
    pose: PoseEstimate
    bottom_circle: CirclePlacement
    top_circle: CirclePlacement

    def to_dict(self):
        return {"segment": self.segment_index, "pose": self.pose.to_dict(),
                "bottom_circle": self.bottom_circle.to_dict(), "top_circle": self.top_circle.to_dict()}


def segment_twist_from_pose(pose: PoseEstimate, spec: GraftSpec | None = None) -> float:
    """Rotation of the pose about the segment's own axis, degrees in (-180, 180]."""
    _, angle = swing_twist(pose.rotation, EZ)
    return float(np.rad2deg(angle))


def segment_pose(k: int, pose: PoseEstimate, spec: GraftSpec) -> SegmentPose:
    z0, z1 = spec.segment_bounds()[k]
    r = spec.segments[k].graft_radius * pose.scale
    normal = pose.rotation @ EZ
    twist = segment_twist_from_pose(pose)
    bottom = CirclePlacement(pose.apply([0.0, 0.0, z0]), normal, r, twist)
    top = CirclePlacement(pose.apply([0.0, 0.0, z1]), normal, r, twist)
    return SegmentPose(k, pose, bottom, top)


def continuity_correct(poses, spec: GraftSpec):
    """Re-chain segment positions; orientations are kept.

    The bottom segment stays where its pose puts it. Each following segment
    is translated so its bottom-circle centre sits one gap height above the
    previous top-circle centre, along the normalized mean of the two
    segment axes.
    """
    poses = [p if isinstance(p, SegmentPose) else segment_pose(k, p, spec) for k, p in enumerate(poses)]
    if len(poses) != spec.n_segments:
        raise SpecError(f"expected {spec.n_segments} segment poses, got {len(poses)}")
    out = [poses[0]]
    bounds = spec.segment_bounds()
    for k in range(1, len(poses)):
        prev, cur = out[-1], poses[k]
        direction = prev.top_circle.normal + cur.bottom_circle.normal
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            raise DegenerateGeometryError(f"segments {k - 1} and {k} have antiparallel axes")
        target = prev.top_circle.center + spec.gap_heights[k - 1] * direction / norm
        p = cur.pose
        t = target - p.scale * p.rotation @ np.array([0.0, 0.0, bounds[k][0]])
        out.append(segment_pose(k, PoseEstimate(p.rotation, t, p.scale, p.reprojection_rmse), spec))
    return out


def interp_gap(lower: CirclePlacement, upper: CirclePlacement, n_steps: int):
    """Circles from `lower` to `upper` inclusive; endpoints are the inputs.

    Centres, radii and twist are linear in the step; normals are linear and
    then renormalized; twist follows the shorter way round.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    dtwist = (upper.twist - lower.twist + 180.0) % 360.0 - 180.0
    out = [lower]
    for j in range(1, n_steps - 1):
        s = j / (n_steps - 1)
        n = (1 - s) * lower.normal + s * upper.normal
        if np.linalg.norm(n) < 1e-12:
            raise DegenerateGeometryError("antiparallel circle normals cannot be interpolated")
        out.append(CirclePlacement(
            (1 - s) * lower.center + s * upper.center, n,
            (1 - s) * lower.radius + s * upper.radius, lower.twist + s * dtwist))
    out.append(upper)
    return out


def gap_rotation(normal):
    """Rotation taking the base-plane normal [0, 0, 1] onto `normal`.

    Axis [alpha, beta, delta] is the normalized cross product of `normal`
    with [0, 0, -1] and the angle is that between `normal` and +z.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    axis = np.cross(n, [0.0, 0.0, -1.0])
    sin_o = np.linalg.norm(axis)
    cos_o = float(np.clip(n[2], -1.0, 1.0))
    if sin_o < 1e-15:
        if cos_o > 0:
            return np.eye(3)
        alpha, beta, delta = 1.0, 0.0, 0.0
        sin_o = 0.0
    else:
        alpha, beta, delta = axis / sin_o
    # recompute from the angle so the matrix stays orthonormal to rounding
    omega = np.arctan2(sin_o, cos_o)
    c, s = np.cos(omega), np.sin(omega)
    cp = 1.0 - c
    return np.array([
        [c + alpha ** 2 * cp, alpha * beta * cp - delta * s, alpha * delta * cp + beta * s],
        [alpha * beta * cp + delta * s, c + beta ** 2 * cp, beta * delta * cp - alpha * s],
        [alpha * delta * cp - beta * s, beta * delta * cp + alpha * s, c + delta ** 2 * cp],
    ])


def gap_vertices(circle: CirclePlacement, angular_resolution=1.0):
    """Ring points ``center + M [r cos(t+T), r sin(t+T), 0]`` for t on the angular grid."""
    n = int(round(360.0 / angular_resolution))
    theta = np.deg2rad(np.arange(n) * angular_resolution + circle.twist)
    base = np.column_stack([circle.radius * np.cos(theta), circle.radius * np.sin(theta), np.zeros(n)])
    return circle.center + base @ gap_rotation(circle.normal).T


@dataclass(frozen=True)
class InstantiatedShape:
    segment_poses: tuple
    gap_circles: tuple
    mesh: Mesh

    def to_dict(self):
        return {
            "segments": [sp.to_dict() for sp in self.segment_poses],
            "gaps": [[c.to_dict() for c in gap] for gap in self.gap_circles],
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def segment_poses_only(self):
        return [sp.pose for sp in self.segment_poses]


def instantiate_shape(poses, spec: GraftSpec, reference: Mesh | None = None, correct=True):
    """Deployed graft mesh from one pose per segment (bottom to top).

    `reference` may pass a prebuilt `assemble_graft(spec)` mesh; its topology
    (and therefore its openings) is reused.
    """
    if len(poses) != spec.n_segments:
        raise SpecError(f"expected {spec.n_segments} poses, got {len(poses)}")
    reference = reference if reference is not None else assemble_graft(spec)
    seg_poses = continuity_correct(poses, spec) if correct else [
        p if isinstance(p, SegmentPose) else segment_pose(k, p, spec) for k, p in enumerate(poses)]
    layout = level_layout(spec)
    theta = np.deg2rad(layout.angles_deg)
    ring = np.column_stack([np.cos(theta), np.sin(theta)])
    pts = np.empty((len(layout.z), len(theta), 3))

    for k, sp in enumerate(seg_poses):
        levels = np.flatnonzero(layout.owner == k)
        design = np.empty((len(levels), len(theta), 3))
        design[..., :2] = layout.radius[levels, None, None] * ring[None]
        design[..., 2] = layout.z[levels, None]
        pts[levels] = sp.pose.apply(design.reshape(-1, 3)).reshape(design.shape)

    gaps = []
    res = spec.height_resolution
    for g in range(spec.n_segments - 1):
        n_steps = int(round(spec.gap_heights[g] / res)) + 1
        circles = interp_gap(seg_poses[g].top_circle, seg_poses[g + 1].bottom_circle, n_steps)
        gaps.append(tuple(circles))
        levels = np.flatnonzero(layout.owner == -(g + 1))
        for lev, circle in zip(levels, circles[1:-1]):
            pts[lev] = gap_vertices(circle, spec.angular_resolution)

    vertices = pts[reference.grid != HOLE]
    wires = [seg_poses[k].pose.apply(w) for k, w in enumerate(reference.wires)]
    return InstantiatedShape(tuple(seg_poses), tuple(gaps), reference.with_vertices(vertices, wires))
