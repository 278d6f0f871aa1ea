"""Parametric surface model of a fenestrated stent graft.

The graft is a stack of circles at a fixed height step, stored as a
(level x angle-step) grid. Stent segments and fabric-only gaps alternate
from the bottom up; fenestrations and scallops remove grid vertices, and
the sinusoidal stent wires are carried as polyline annotations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import SpecError

HOLE = -1


@dataclass(frozen=True)
class SegmentSpec:
    r_n: float
    r_x: float
    h_prime: float
    N_v: int
    N_s: int
    graft_radius: float

    def __post_init__(self):
        if not (0 < self.r_n <= self.r_x):
            raise SpecError(f"need 0 < r_n <= r_x, got r_n={self.r_n}, r_x={self.r_x}")
        if self.h_prime <= 0:
            raise SpecError(f"segment height must be positive, got {self.h_prime}")
        if self.N_s < 1:
            raise SpecError(f"N_s must be >= 1, got {self.N_s}")
        if self.N_v < 3 * self.N_s:
            raise SpecError(f"N_v={self.N_v} must be >= 3*N_s={3 * self.N_s}")
        if self.graft_radius <= 0:
            raise SpecError(f"graft radius must be positive, got {self.graft_radius}")


def _wrap_deg(d):
    return (np.asarray(d, dtype=float) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class FenestrationSpec:
    """Elliptical hole centred at (center_angle, center_height).

    The ellipse is measured in the unrolled cylindrical metric: arc length
    ``radius * angle`` horizontally, height vertically.
    """

    center_angle: float
    center_height: float
    angular_width: float
    height_extent: float
    kind = "fenestration"

    def __post_init__(self):
        _check_opening(self)

    def local(self, theta_deg, z, radius, top):
        """Unrolled (arc, height) offsets from the opening centre."""
        s = np.deg2rad(_wrap_deg(np.asarray(theta_deg) - self.center_angle)) * radius
        t = np.asarray(z, dtype=float) - self.center_height
        return s, t

    def semi_axes(self, radius):
        return radius * math.radians(self.angular_width) / 2.0, self.height_extent / 2.0

    def contains(self, theta_deg, z, radius, top, tol=1e-12):
        s, t = self.local(theta_deg, z, radius, top)
        a, b = self.semi_axes(radius)
        return (s / a) ** 2 + (t / b) ** 2 <= 1.0 + tol

    def boundary_residual(self, theta_deg, z, radius, top):
        s, t = self.local(theta_deg, z, radius, top)
        a, b = self.semi_axes(radius)
        return (s / a) ** 2 + (t / b) ** 2 - 1.0

    def nearest_boundary(self, s, t, radius, top):
        a, b = self.semi_axes(radius)
        return _closest_on_ellipse(a, b, s, t)

    def vertical_bounds(self, top):
        return self.center_height - self.height_extent / 2.0, self.center_height + self.height_extent / 2.0


@dataclass(frozen=True)
class ScallopSpec:
    """U-shaped cut open at the graft top edge.

    Straight sides of arc width ``radius * angular_width`` run down from the
    top edge and close in a semicircle; `height_extent` is the total depth.
    """

    center_angle: float
    angular_width: float
    height_extent: float
    kind = "scallop"

    def __post_init__(self):
        _check_opening(self)

    def local(self, theta_deg, z, radius, top):
        # origin at the bottom of the U
        s = np.deg2rad(_wrap_deg(np.asarray(theta_deg) - self.center_angle)) * radius
        t = np.asarray(z, dtype=float) - (top - self.height_extent)
        return s, t

    def half_width(self, radius):
        return radius * math.radians(self.angular_width) / 2.0

    def contains(self, theta_deg, z, radius, top, tol=1e-12):
        s, t = self.local(theta_deg, z, radius, top)
        w = self.half_width(radius)
        side = (np.abs(s) <= w * (1 + tol)) & (t >= w - tol)
        cap = s ** 2 + (t - w) ** 2 <= w ** 2 * (1 + tol)
        return (side | cap) & (t <= self.height_extent + tol)

    def boundary_residual(self, theta_deg, z, radius, top):
        s, t = self.local(theta_deg, z, radius, top)
        w = self.half_width(radius)
        s, t = np.broadcast_arrays(s, t)
        side = np.abs(np.abs(s) - w)
        cap = np.abs(np.hypot(s, t - w) - w)
        return np.where(t >= w, side, cap)

    def nearest_boundary(self, s, t, radius, top):
        w = self.half_width(radius)
        depth = self.height_extent
        cands = []
        if depth > w:
            for side in (-w, w):
                cands.append((side, min(max(t, w), depth)))
        d = math.hypot(s, t - w)
        if d == 0.0:
            cands.append((0.0, 0.0))
        else:
            ps, pt = w * s / d, w + w * (t - w) / d
            if pt > w:
                # projection lands on the missing upper half; use the arc ends
                cands.extend([(-w, w), (w, w)])
            else:
                cands.append((ps, pt))
        return min(cands, key=lambda p: (p[0] - s) ** 2 + (p[1] - t) ** 2)

    def vertical_bounds(self, top):
        return top - self.height_extent, top


def _check_opening(o):
    if o.angular_width <= 0 or o.angular_width > 360:
        raise SpecError(f"{o.kind} angular width must be in (0, 360], got {o.angular_width}")
    if o.height_extent <= 0:
        raise SpecError(f"{o.kind} height extent must be positive, got {o.height_extent}")
    if not (0 <= o.center_angle < 360):
        raise SpecError(f"{o.kind} center angle must be in [0, 360), got {o.center_angle}")


def _robust_len(x, y):
    return math.hypot(x, y)


def _ellipse_root(r0, z0, z1, g, max_iter=200):
    n0 = r0 * z0
    s0 = z1 - 1.0
    s1 = 0.0 if g < 0 else _robust_len(n0, z1) - 1.0
    s = 0.0
    for _ in range(max_iter):
        s = 0.5 * (s0 + s1)
        if s == s0 or s == s1:
            break
        ratio0 = n0 / (s + r0)
        ratio1 = z1 / (s + 1.0)
        g = ratio0 ** 2 + ratio1 ** 2 - 1.0
        if g > 0:
            s0 = s
        elif g < 0:
            s1 = s
        else:
            break
    return s


def _closest_on_ellipse(a, b, s, t):
    """Nearest point of the ellipse (x/a)^2 + (y/b)^2 = 1 to (s, t).

    Bisection on the Lagrange multiplier (Eberly); exact in the degenerate
    axis cases.
    """
    swap = a < b
    e0, e1 = (b, a) if swap else (a, b)
    y0, y1 = (abs(t), abs(s)) if swap else (abs(s), abs(t))
    if y1 > 0:
        if y0 > 0:
            z0, z1 = y0 / e0, y1 / e1
            g = z0 ** 2 + z1 ** 2 - 1.0
            if g != 0:
                r0 = (e0 / e1) ** 2
                sbar = _ellipse_root(r0, z0, z1, g)
                x0, x1 = r0 * y0 / (sbar + r0), y1 / (sbar + 1.0)
            else:
                x0, x1 = y0, y1
        else:
            x0, x1 = 0.0, e1
    else:
        numer0 = e0 * y0
        denom0 = e0 ** 2 - e1 ** 2
        if numer0 < denom0:
            xde0 = numer0 / denom0
            x0, x1 = e0 * xde0, e1 * math.sqrt(1.0 - xde0 ** 2)
        else:
            x0, x1 = e0, 0.0
    if swap:
        x0, x1 = x1, x0
    return math.copysign(x0, s), math.copysign(x1, t)


@dataclass(frozen=True)
class GraftSpec:
    segments: tuple
    gap_heights: tuple
    fenestrations: tuple = ()
    scallops: tuple = ()
    height_resolution: float = 1.0
    angular_resolution: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "gap_heights", tuple(float(g) for g in self.gap_heights))
        object.__setattr__(self, "fenestrations", tuple(self.fenestrations))
        object.__setattr__(self, "scallops", tuple(self.scallops))
        if len(self.segments) < 1:
            raise SpecError("a graft needs at least one segment")
        if len(self.gap_heights) != len(self.segments) - 1:
            raise SpecError(
                f"expected {len(self.segments) - 1} gap heights, got {len(self.gap_heights)}"
            )
        if self.height_resolution <= 0 or self.angular_resolution <= 0:
            raise SpecError("resolutions must be positive")
        _angle_steps(self.angular_resolution)
        for h in [s.h_prime for s in self.segments] + list(self.gap_heights):
            if h <= 0:
                raise SpecError(f"heights must be positive, got {h}")
            _level_steps(h, self.height_resolution)

    @property
    def n_segments(self):
        return len(self.segments)

    @property
    def openings(self):
        return self.fenestrations + self.scallops

    @property
    def total_height(self):
        return float(sum(s.h_prime for s in self.segments) + sum(self.gap_heights))

    def segment_bounds(self):
        """(bottom, top) heights of each segment in the design frame."""
        out, z = [], 0.0
        for k, seg in enumerate(self.segments):
            out.append((z, z + seg.h_prime))
            z += seg.h_prime
            if k < len(self.gap_heights):
                z += self.gap_heights[k]
        return out

    def to_dict(self):
        return {
            "segments": [asdict(s) for s in self.segments],
            "gap_heights": list(self.gap_heights),
            "fenestrations": [asdict(f) for f in self.fenestrations],
            "scallops": [asdict(s) for s in self.scallops],
            "height_resolution": self.height_resolution,
            "angular_resolution": self.angular_resolution,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"segments", "gap_heights", "fenestrations", "scallops",
                            "height_resolution", "angular_resolution"}
        if unknown:
            raise SpecError(f"unknown graft spec key(s): {sorted(unknown)}")
        try:
            return cls(
                segments=[SegmentSpec(**s) for s in d["segments"]],
                gap_heights=d.get("gap_heights", []),
                fenestrations=[FenestrationSpec(**f) for f in d.get("fenestrations", [])],
                scallops=[ScallopSpec(**s) for s in d.get("scallops", [])],
                height_resolution=d.get("height_resolution", 1.0),
                angular_resolution=d.get("angular_resolution", 1.0),
            )
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed graft spec: {exc}") from exc

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _angle_steps(res):
    if res <= 0:
        raise SpecError(f"angular resolution must be positive, got {res}")
    n = 360.0 / res
    if abs(n - round(n)) > 1e-9:
        raise SpecError(f"angular resolution {res} does not divide 360")
    return int(round(n))


def _level_steps(h, res):
    n = h / res
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise SpecError(f"height {h} is not a multiple of the height resolution {res}")
    return int(round(n))


DEFAULT_SEGMENT_HEIGHTS = (17.0, 13.0, 13.0, 16.0, 21.0, 25.0)


def default_device():
    """Six-segment fenestrated graft, 117 mm long.

    Stent radii 11.5 / 15 mm; segment heights bottom to top from
    `DEFAULT_SEGMENT_HEIGHTS`. Wire counts and the opening layout are
    illustrative.
    """
    segments = [
        SegmentSpec(r_n=11.5, r_x=15.0, h_prime=h, N_v=60, N_s=5, graft_radius=15.0)
        for h in DEFAULT_SEGMENT_HEIGHTS
    ]
    return GraftSpec(
        segments=segments,
        gap_heights=(3.0, 2.0, 2.0, 2.0, 3.0),
        fenestrations=(
            FenestrationSpec(center_angle=60.0, center_height=84.0, angular_width=24.0, height_extent=7.0),
            FenestrationSpec(center_angle=300.0, center_height=87.0, angular_width=24.0, height_extent=7.0),
        ),
        scallops=(ScallopSpec(center_angle=90.0, angular_width=36.0, height_extent=10.0),),
    )


@dataclass(frozen=True)
class LevelLayout:
    """Per-level bookkeeping: height, radius and owner of each ring.

    ``owner[l] = k >= 0`` for rings on segment k (boundary rings included);
    ``owner[l] = -(g + 1)`` for interior rings of gap g.
    """

    z: np.ndarray
    radius: np.ndarray
    owner: np.ndarray
    angles_deg: np.ndarray


def level_layout(spec: GraftSpec) -> LevelLayout:
    res = spec.height_resolution
    n_levels = _level_steps(spec.total_height, res) + 1
    idx = np.arange(n_levels)
    z = idx * res
    radius = np.empty(n_levels)
    owner = np.empty(n_levels, dtype=int)
    start = 0
    for k, seg in enumerate(spec.segments):
        n = _level_steps(seg.h_prime, res)
        owner[start:start + n + 1] = k
        radius[start:start + n + 1] = seg.graft_radius
        start += n
        if k < len(spec.gap_heights):
            m = _level_steps(spec.gap_heights[k], res)
            r0, r1 = seg.graft_radius, spec.segments[k + 1].graft_radius
            j = np.arange(1, m)
            owner[start + 1:start + m] = -(k + 1)
            radius[start + 1:start + m] = r0 + (j / m) * (r1 - r0)
            start += m
    A = _angle_steps(spec.angular_resolution)
    return LevelLayout(z=z, radius=radius, owner=owner, angles_deg=np.arange(A) * spec.angular_resolution)


@dataclass(frozen=True)
class Mesh:
    """Triangle surface on a ring grid.

    `grid[l, a]` is the vertex id of ring l, angle step a, or ``HOLE``.
    `wires` holds stent polylines (closed loops, first vertex not repeated).
    """

    vertices: np.ndarray
    faces: np.ndarray
    grid: np.ndarray
    wires: tuple = field(default=())

    @property
    def ring_index(self):
        return {(int(l), int(a)): int(v) for (l, a), v in np.ndenumerate(self.grid)}

    @property
    def n_holes(self):
        return int(np.count_nonzero(self.grid == HOLE))

    def with_vertices(self, vertices, wires=None):
        return Mesh(np.asarray(vertices, dtype=float), self.faces, self.grid,
                    self.wires if wires is None else tuple(wires))

    def euler_characteristic(self):
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        used = np.unique(self.faces)
        return len(used) - len(edges) + len(self.faces)


def circle_vertices(r, h, angular_resolution=1.0):
    """Ring of points ``[r cos t, r sin t, h]`` at ``t = k * angular_resolution`` degrees."""
    if r <= 0:
        raise SpecError(f"circle radius must be positive, got {r}")
    n = _angle_steps(angular_resolution)
    theta = np.deg2rad(np.arange(n) * angular_resolution)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(n, float(h))])


def stent_vertices(seg: SegmentSpec):
    """Sinusoidal stent wire, vertices i = 1..N_v, centred on z = 0."""
    i = np.arange(1, seg.N_v + 1)
    phase = 2 * np.pi * i / seg.N_v
    wave = seg.h_prime * np.sin(phase * seg.N_s) / 2.0
    r = seg.r_n + (seg.r_x - seg.r_n) * (wave + seg.h_prime / 2.0) / seg.h_prime
    return np.column_stack([r * np.cos(phase), r * np.sin(phase), wave])


def _grid_faces(grid):
    L, A = grid.shape
    l, a = np.meshgrid(np.arange(L - 1), np.arange(A), indexing="ij")
    a1 = (a + 1) % A
    v00, v01 = grid[l, a], grid[l, a1]
    v10, v11 = grid[l + 1, a], grid[l + 1, a1]
    tri = np.concatenate([
        np.stack([v00, v01, v11], axis=-1).reshape(-1, 3),
        np.stack([v00, v11, v10], axis=-1).reshape(-1, 3),
    ])
    return tri[(tri != HOLE).all(axis=1)]


def _grid_points(layout: LevelLayout):
    theta = np.deg2rad(layout.angles_deg)
    r = layout.radius[:, None]
    return np.stack([r * np.cos(theta)[None, :], r * np.sin(theta)[None, :],
                     np.broadcast_to(layout.z[:, None], (len(layout.z), len(theta)))], axis=-1)


def _mesh_from_mask(points, keep, wires=()):
    grid = np.full(keep.shape, HOLE, dtype=int)
    grid[keep] = np.arange(np.count_nonzero(keep))
    return Mesh(points[keep].copy(), _grid_faces(grid), grid, tuple(wires))


def opening_mask(spec: GraftSpec, layout: LevelLayout | None = None):
    """Boolean (level x angle) grid, True where a vertex lies in an opening."""
    layout = layout or level_layout(spec)
    top = spec.total_height
    mask = np.zeros((len(layout.z), len(layout.angles_deg)), dtype=bool)
    for o in spec.openings:
        lo, hi = o.vertical_bounds(top)
        if lo < -1e-9 or hi > top + 1e-9:
            raise SpecError(f"{o.kind} at {o.center_angle} deg spans [{lo}, {hi}] mm, outside [0, {top}]")
        mask |= o.contains(layout.angles_deg[None, :], layout.z[:, None], layout.radius[:, None], top)
    return mask


def cut_openings(mesh: Mesh, spec: GraftSpec) -> Mesh:
    """Remove grid vertices inside fenestrations and scallops, and their faces."""
    layout = level_layout(spec)
    if mesh.grid.shape != (len(layout.z), len(layout.angles_deg)):
        raise SpecError("mesh grid does not match the graft spec")
    holes = opening_mask(spec, layout)
    if not holes.any():
        return mesh
    present = mesh.grid != HOLE
    points = np.zeros(mesh.grid.shape + (3,))
    points[present] = mesh.vertices[mesh.grid[present]]
    return _mesh_from_mask(points, present & ~holes, mesh.wires)


def snap_stent_to_edges(wire, openings: Sequence, graft_radius: float, top: float):
    """Move wire vertices lying inside an opening onto its nearest edge.

    Distances are measured on the unrolled graft surface of radius
    `graft_radius`; each vertex keeps its own radial distance.
    """
    wire = np.array(wire, dtype=float, copy=True)
    if not len(openings):
        return wire
    theta = np.rad2deg(np.arctan2(wire[:, 1], wire[:, 0])) % 360.0
    rad = np.hypot(wire[:, 0], wire[:, 1])
    for i in range(len(wire)):
        for o in openings:
            if not o.contains(theta[i], wire[i, 2], graft_radius, top, tol=-1e-12):
                continue
            s, t = o.local(theta[i], wire[i, 2], graft_radius, top)
            bs, bt = o.nearest_boundary(float(s), float(t), graft_radius, top)
            theta[i] = theta[i] + np.rad2deg((bs - s) / graft_radius)
            wire[i, 2] += bt - t
            ang = np.deg2rad(theta[i])
            wire[i, 0], wire[i, 1] = rad[i] * np.cos(ang), rad[i] * np.sin(ang)
    return wire


def assemble_graft(spec: GraftSpec) -> Mesh:
    """Build the reference (undeployed) graft mesh with openings and stent wires."""
    layout = level_layout(spec)
    points = _grid_points(layout)
    full = _mesh_from_mask(points, np.ones(points.shape[:2], dtype=bool))
    top = spec.total_height
    wires = []
    for (z0, z1), seg in zip(spec.segment_bounds(), spec.segments):
        w = stent_vertices(seg)
        w[:, 2] += (z0 + z1) / 2.0
        wires.append(snap_stent_to_edges(w, spec.openings, seg.graft_radius, top))
    full = Mesh(full.vertices, full.faces, full.grid, tuple(wires))
    return cut_openings(full, spec)
