"""Small rotation helpers shared across modules."""

import numpy as np

EZ = np.array([0.0, 0.0, 1.0])


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length vector")
    return v / n


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_matrix(axis, angle):
    """Rotation matrix for a right-handed rotation of `angle` radians about `axis`.

    `axis` need not be normalized.
    """
    a = unit(axis)
    K = skew(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotvec_matrix(rotvec):
    """Rotation matrix from an axis-angle vector (radians); zero vector -> identity."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    if angle == 0.0:
        return np.eye(3)
    return axis_angle_matrix(rotvec, angle)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def matrix_to_quaternion(R):
    """Unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        S = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * S, (R[2, 1] - R[1, 2]) / S, (R[0, 2] - R[2, 0]) / S, (R[1, 0] - R[0, 1]) / S])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        S = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / S, 0.25 * S, (R[0, 1] + R[1, 0]) / S, (R[0, 2] + R[2, 0]) / S])
    elif R[1, 1] > R[2, 2]:
        S = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / S, (R[0, 1] + R[1, 0]) / S, 0.25 * S, (R[1, 2] + R[2, 1]) / S])
    else:
        S = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / S, (R[0, 2] + R[2, 0]) / S, (R[1, 2] + R[2, 1]) / S, 0.25 * S])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def swing_twist(R, axis=EZ):
    """Split ``R = swing @ twist`` where `twist` rotates about `axis`.

    Returns ``(swing, twist_angle)``; the twist angle is in radians in
    (-pi, pi]. `swing` is the minimal rotation taking `axis` onto ``R @ axis``.
    """
    d = unit(axis)
    q = matrix_to_quaternion(R)
    w, v = q[0], q[1:]
    p = float(v @ d)
    if abs(w) < 1e-15 and abs(p) < 1e-15:
        # half-turn swing: twist is undefined, take zero
        angle = 0.0
    else:
        angle = 2.0 * np.arctan2(p, w)
    angle = (angle + np.pi) % (2 * np.pi) - np.pi
    swing = R @ axis_angle_matrix(d, -angle)
    return swing, float(angle)
