"""Robust Perspective-n-Point pose of a stent segment from its markers.

Pipeline for n >= 4 correspondences:

1. pick a rotation axis: the marker pair (P0, P1) whose edge best follows
   the device Z axis;
2. form one P3P quartic f_i(x) per remaining marker, on the triangle
   (P0, P1, P_i); x parametrizes the depth ratio of P1 to P0;
3. take the local minima of F(x) = sum_i f_i(x)^2 (real roots of the
   degree-7 F'(x) with F'' > 0);
4. for each minimum, recover the marker depths, which fixes the axis
   direction in the camera frame;
5. solve the linear system for the remaining rotation about that axis
   (c = cos a, s = sin a) and the translation;
6. place markers on their viewing rays and refine with a least-squares
   rigid alignment.

The candidate with the smallest reprojection error wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorrespondenceError, DegenerateGeometryError, PoseSolveError
from .geometry import EZ, rot_z, unit
from .projection import CameraModel, project

REAL_ROOT_TOL = 1e-8
DEHOMOGENIZE_TOL = 1e-12


@dataclass(frozen=True)
class PoseEstimate:
    """Similarity transform ``x -> scale * rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    reprojection_rmse: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def apply(self, points):
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def to_dict(self):
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
            "scale": float(self.scale),
            "reprojection_rmse": float(self.reprojection_rmse),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.reshape(d["rotation"], (3, 3)), np.asarray(d["translation"]),
                   d.get("scale", 1.0), d.get("reprojection_rmse", float("nan")))


IDENTITY = PoseEstimate()


@dataclass(frozen=True)
class AxisChoice:
    i0: int
    i1: int
    axis: np.ndarray
    fallback: bool = False


def select_rotation_axis(reference_points, up=EZ):
    """Marker edge used as the RPnP rotation axis.

    Chooses the pair (P_i0, P_i1) maximizing ``dz^2 / |P_i1 - P_i0|`` (long and
    aligned with `up`), oriented so the axis points along +`up`. When the
    markers have no spread along `up`, falls back to the longest edge.
    """
    P = np.asarray(reference_points, dtype=float)
    if len(P) < 3:
        raise DegenerateGeometryError("need at least 3 points to choose an axis")
    sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("reference points are collinear")
    diff = P[None, :, :] - P[:, None, :]
    length = np.linalg.norm(diff, axis=-1)
    dz = diff @ np.asarray(up, dtype=float)
    scale = length.max()
    if np.abs(dz).max() <= 1e-9 * scale:
        i0, i1 = np.unravel_index(np.argmax(np.triu(length, 1)), length.shape)
        return AxisChoice(int(i0), int(i1), diff[i0, i1] / length[i0, i1], fallback=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(dz > 0, dz ** 2 / length, -np.inf)
    i0, i1 = np.unravel_index(np.argmax(score), score.shape)
    return AxisChoice(int(i0), int(i1), diff[i0, i1] / length[i0, i1])


@dataclass(frozen=True)
class P3PSubproblem:
    """Quartic f(x) = a x^4 + b x^3 + c x^2 + d x + e for triangle (P0, P1, Pi).

    Bearings v0, v1, vi are unit rays. l0 = |v0| = 1, l1 = v0.v1, l2 = v0.vi,
    cos_gamma3 = v1.vi, C1 = sin(v0, v1), C2 = sin(v0, vi). D1 = |P0P1|,
    D2 = |P0Pi|, D3 = |P1Pi|, k = D2/D1. At the true pose, P1 lies at depth
    ratio ``l1 + x`` relative to P0 along the rays.
    """

    coefficients: np.ndarray
    A: np.ndarray
    D: np.ndarray
    k: float
    cos_gamma3: float
    C1: float
    C2: float
    l: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    vi: np.ndarray

    def __call__(self, x):
        return np.polyval(self.coefficients, x)


def build_p3p(ref_triple, bearing_triple):
    P0, P1, Pi = (np.asarray(p, dtype=float) for p in ref_triple)
    v0, v1, vi = (unit(v) for v in bearing_triple)
    D1 = np.linalg.norm(P1 - P0)
    D2 = np.linalg.norm(Pi - P0)
    D3 = np.linalg.norm(Pi - P1)
    if min(D1, D2, D3) <= 1e-12 * max(D1, D2, D3, 1.0):
        raise DegenerateGeometryError("coincident reference points")
    l0, l1, l2 = 1.0, float(v0 @ v1), float(v0 @ vi)
    cg3 = float(v1 @ vi)
    C1 = np.sqrt(max(0.0, 1.0 - l1 ** 2))
    C2 = np.sqrt(max(0.0, 1.0 - l2 ** 2))
    k = D2 / D1
    A1 = k ** 2
    A2 = k ** 2 * C1 ** 2 - C2 ** 2
    A3 = l2 * cg3 - l1
    A4 = l1 * cg3 - l2
    A5 = cg3
    A6 = (D3 ** 2 - D1 ** 2 - D2 ** 2) / (2 * D1 ** 2)
    A7 = l0 ** 2 - l1 ** 2 - l2 ** 2 + l1 * l2 * cg3 + A6 * C1 ** 2
    coeffs = np.array([
        A6 ** 2 - A1 * A5 ** 2,
        2 * (A3 * A6 - A1 * A4 * A5),
        A3 ** 2 + 2 * A6 * A7 - A1 * A4 ** 2 - A2 * A5 ** 2,
        2 * (A3 * A7 - A2 * A4 * A5),
        A7 ** 2 - A2 * A4 ** 2,
    ])
    return P3PSubproblem(coeffs, np.array([A1, A2, A3, A4, A5, A6, A7]), np.array([D1, D2, D3]),
                         k, cg3, C1, C2, np.array([l0, l1, l2]), v0, v1, vi)


def cost_polynomial(subproblems):
    """Coefficients of F(x) = sum f_i(x)^2 (degree 8, highest first)."""
    F = np.zeros(9)
    for sp in subproblems:
        F = F + np.polymul(sp.coefficients, sp.coefficients)
    return F


def _real_roots(poly):
    roots = np.roots(poly)
    keep = np.abs(roots.imag) < REAL_ROOT_TOL * np.maximum(1.0, np.abs(roots.real))
    return np.sort(roots[keep].real)


def minimize_cost(subproblems):
    """Local minima of F(x) = sum f_i(x)^2, sorted by increasing F.

    Critical points are the real eigenvalues of the companion matrix of
    F'(x), each polished by one Newton step.
    """
    if not subproblems:
        raise ValueError("at least one subproblem is required")
    F = cost_polynomial(subproblems)
    dF = np.polyder(F)
    d2F = np.polyder(dF)
    minima = []
    for x in _real_roots(dF):
        h = np.polyval(d2F, x)
        if h != 0:
            x = x - np.polyval(dF, x) / h
        if np.polyval(d2F, x) > 0:
            minima.append(float(x))
    if not minima:
        raise PoseSolveError("cost function has no real local minimum")
    return sorted(minima, key=lambda x: np.polyval(F, x))


def recover_depths(x, ref_points, bearings, i0, i1):
    """Camera-frame marker positions implied by the depth parameter `x`.

    P0 and P1 sit on their rays with depth ratio ``l1 + x``; the overall
    scale comes from |P0P1|. Every other marker's depth is linear in its
    two triangle constraints (law of cosines on both edges). Raises
    PoseSolveError when an axis marker depth is not positive; the other
    depths are returned as computed, since under pixel noise they can
    turn negative for a candidate whose axis direction is still sound.
    """
    P = np.asarray(ref_points, dtype=float)
    V = np.asarray(bearings, dtype=float)
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    v0, v1 = V[i0], V[i1]
    c01 = float(v0 @ v1)
    s01_sq = 1.0 - c01 ** 2
    ratio = c01 + x
    if ratio <= 0:
        raise PoseSolveError("negative depth for the axis marker")
    D1 = np.linalg.norm(P[i1] - P[i0])
    edge_sq = x ** 2 + s01_sq
    lam = D1 / np.sqrt(edge_sq)
    depth = np.empty(len(P))
    depth[i0] = 1.0
    depth[i1] = ratio
    for j in range(len(P)):
        if j in (i0, i1):
            continue
        D2 = np.linalg.norm(P[j] - P[i0])
        D3 = np.linalg.norm(P[j] - P[i1])
        A6 = (D3 ** 2 - D1 ** 2 - D2 ** 2) / (2 * D1 ** 2)
        c0j, c1j = float(v0 @ V[j]), float(v1 @ V[j])
        num = -A6 * edge_sq - s01_sq + x * c01
        den = ratio * c1j - c0j
        if abs(den) > 1e-9:
            depth[j] = num / den
        else:
            # ray of Pj orthogonal to the axis edge: fall back on the P0 constraint
            k_sq = (D2 / D1) ** 2
            disc = c0j ** 2 - 1.0 + k_sq * edge_sq
            roots = c0j + np.array([-1.0, 1.0]) * np.sqrt(max(disc, 0.0))
            res = [abs(r ** 2 - 2 * r * ratio * c1j + ratio ** 2 - (D3 / D1) ** 2 * edge_sq) for r in roots]
            depth[j] = roots[int(np.argmin(res))]
    return (lam * depth)[:, None] * V


def _axis_frame(axis):
    """Rotation whose third column is `axis`."""
    z = unit(axis)
    helper = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < abs(z[2]) else np.array([0.0, 0.0, 1.0])
    x = unit(np.cross(helper, z))
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


@dataclass(frozen=True)
class ZRotSystem:
    """Homogeneous system [A | B] [c, s, tx, ty, tz, 1]^T = 0, two rows per marker."""

    A_block: np.ndarray
    B_block: np.ndarray

    def __post_init__(self):
        if self.A_block.shape[1] != 2 or self.B_block.shape[1] != 4:
            raise ValueError("A must have 2 columns and B 4 columns")
        if self.A_block.shape[0] != self.B_block.shape[0] or self.A_block.shape[0] % 2:
            raise ValueError("A and B need the same even number of rows")

    @property
    def matrix(self):
        return np.hstack([self.A_block, self.B_block])


def build_z_system(axis_frame_points, normalized_uv, camera_axis_frame):
    """Linear system for the rotation about the axis and the translation.

    `axis_frame_points` are reference markers with z along the rotation
    axis; `camera_axis_frame` has the axis direction (camera frame) as its
    third column. The camera-frame point is
    ``c * g + s * h + w + t`` with ``g = r1 x + r2 y``, ``h = r2 x - r1 y``,
    ``w = r3 z``.
    """
    X = np.asarray(axis_frame_points, dtype=float)
    m = np.asarray(normalized_uv, dtype=float)
    r1, r2, r3 = camera_axis_frame.T
    g = np.outer(X[:, 0], r1) + np.outer(X[:, 1], r2)
    h = np.outer(X[:, 0], r2) - np.outer(X[:, 1], r1)
    w = np.outer(X[:, 2], r3)
    n = len(X)
    A = np.empty((2 * n, 2))
    B = np.zeros((2 * n, 4))
    for row, comp in ((0, 0), (1, 1)):
        coord = m[:, comp]
        A[row::2, 0] = coord * g[:, 2] - g[:, comp]
        A[row::2, 1] = coord * h[:, 2] - h[:, comp]
        B[row::2, comp] = -1.0
        B[row::2, 2] = coord
        B[row::2, 3] = coord * w[:, 2] - w[:, comp]
    return ZRotSystem(A, B)


def solve_z_system(system: ZRotSystem):
    """Null vector of [A | B] -> (c, s, tx, ty, tz) with c^2 + s^2 = 1."""
    M = system.matrix
    if M.shape[0] < 8:
        raise CorrespondenceError(f"need at least 8 rows (4 markers), got {M.shape[0]}")
    _, sv, Vt = np.linalg.svd(M)
    if sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateGeometryError("rank-deficient axis-rotation system")
    v = Vt[-1]
    if abs(v[5]) < DEHOMOGENIZE_TOL:
        raise DegenerateGeometryError("axis-rotation system cannot be dehomogenized")
    v = v / v[5]
    norm = np.hypot(v[0], v[1])
    if norm == 0:
        raise DegenerateGeometryError("degenerate rotation components")
    return v[0] / norm, v[1] / norm, v[2], v[3], v[4]


def umeyama(src, dst, with_scale=True):
    """Least-squares similarity (or rigid) transform taking `src` onto `dst`."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.shape[1] != 3:
        raise ValueError("src and dst must both be (n, 3)")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    if np.linalg.svd(xs, compute_uv=False)[1] <= 1e-12 * max(np.abs(xs).max(), 1e-300):
        raise DegenerateGeometryError("source points are collinear")
    cov = xd.T @ xs / len(src)
    U, d, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    scale = float((d * S).sum() / xs.var(axis=0).sum()) if with_scale else 1.0
    t = mu_d - scale * R @ mu_s
    return PoseEstimate(R, t, scale)


def _reprojection_rmse(pose, ref_points, uv, camera):
    pred = project(camera, pose.apply(ref_points))
    return float(np.sqrt(np.mean(np.sum((pred - uv) ** 2, axis=1))))


@dataclass(frozen=True)
class RPnPResult:
    pose: PoseEstimate
    candidates: tuple
    subproblems: tuple
    axis: AxisChoice


def _check_non_planar(P):
    radius = np.sqrt(np.mean(np.sum((P - P.mean(axis=0)) ** 2, axis=1)))
    margin = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)[-1]
    if margin <= 1e-6 * radius:
        raise DegenerateGeometryError(
            f"reference markers are coplanar (margin {margin:.3g} mm); non-planar placement required")


def rpnp_solve(ref_points, image_points, camera: CameraModel) -> RPnPResult:
    """Full RPnP with every surviving candidate kept; see `rpnp_pose`."""
    P = np.asarray(ref_points, dtype=float)
    uv = np.asarray(image_points, dtype=float)
    if len(P) < 4 or len(uv) != len(P):
        raise CorrespondenceError(f"need >= 4 matched correspondences, got {len(P)} / {len(uv)}")
    _check_non_planar(P)
    m = camera.normalized(uv)
    V = np.column_stack([m, np.ones(len(m))])
    V /= np.linalg.norm(V, axis=1, keepdims=True)

    ax = select_rotation_axis(P)
    i0, i1 = ax.i0, ax.i1
    rest = [j for j in range(len(P)) if j not in (i0, i1)]
    rest.sort(key=lambda j: float((P[j] - P[i0]) @ ax.axis))
    subs = tuple(build_p3p((P[i0], P[i1], P[j]), (V[i0], V[i1], V[j])) for j in rest)

    Ro = _axis_frame(ax.axis)
    Xa = (P - P[i0]) @ Ro
    R_cam, t_cam = camera.rotation, camera.translation

    candidates = []
    for x in minimize_cost(subs):
        try:
            Pc = recover_depths(x, P, V, i0, i1)
            Rc = _axis_frame(Pc[i1] - Pc[i0])
            c, s, tx, ty, tz = solve_z_system(build_z_system(Xa, m, Rc))
            Xc = Xa @ (Rc @ rot_z(np.arctan2(s, c))).T + np.array([tx, ty, tz])
            if np.any(Xc[:, 2] <= 0):
                continue
            Xc = V * np.linalg.norm(Xc, axis=1, keepdims=True)
            rel = umeyama(P, Xc, with_scale=False)
        except (PoseSolveError, DegenerateGeometryError):
            continue
        # camera <- reference, then world <- camera
        pose = PoseEstimate(R_cam.T @ rel.rotation, R_cam.T @ (rel.translation - t_cam))
        try:
            rmse = _reprojection_rmse(pose, P, uv, camera)
        except ValueError:
            continue
        candidates.append(PoseEstimate(pose.rotation, pose.translation, 1.0, rmse))
    if not candidates:
        raise PoseSolveError("all pose candidates rejected")
    best = min(candidates, key=lambda p: p.reprojection_rmse)
    return RPnPResult(best, tuple(candidates), subs, ax)


def rpnp_pose(ref_points, image_points, camera: CameraModel) -> PoseEstimate:
    """Pose mapping reference marker positions onto their deployed positions.

    `image_points` are pixel projections of the deployed markers through
    `camera`; the returned rigid transform is expressed in world
    coordinates and carries its reprojection RMSE in pixels.
    """
    return rpnp_solve(ref_points, image_points, camera).pose


def quartic_rows(subproblems):
    """Per-subproblem coefficient rows for diagnostic dumps."""
    rows = []
    for i, sp in enumerate(subproblems):
        a, b, c, d, e = sp.coefficients
        rows.append({"subproblem": i, "a": a, "b": b, "c": c, "d": d, "e": e,
                     "D1": sp.D[0], "D2": sp.D[1], "D3": sp.D[2], "k": sp.k, "cos_gamma3": sp.cos_gamma3})
    return rows
