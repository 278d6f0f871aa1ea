import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stentshape.errors import DegenerateGeometryError, SpecError
from stentshape.geometry import axis_angle_matrix, rot_z, rotvec_matrix, swing_twist, unit
from stentshape.instantiation import (
    CirclePlacement,
    continuity_correct,
    gap_rotation,
    gap_vertices,
    instantiate_shape,
    interp_gap,
    segment_pose,
    segment_twist_from_pose,
)
from stentshape.rpnp import PoseEstimate
from stentshape.simulation import random_rigid

IDENTITY = PoseEstimate(np.eye(3), np.zeros(3))


def design_ring(spec, k, top, step=1.0):
    z = spec.segment_bounds()[k][1 if top else 0]
    t = np.deg2rad(np.arange(0.0, 360.0, step))
    r = spec.segments[k].graft_radius
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.full_like(t, z)])


def circle(center=(0, 0, 0), normal=(0, 0, 1), radius=5.0, twist=0.0):
    return CirclePlacement(np.array(center, float), np.array(normal, float), radius, twist)


# continuity

def test_identity_chain_at_design_heights(spec):
    out = continuity_correct([IDENTITY] * spec.n_segments, spec)
    for (z0, z1), sp in zip(spec.segment_bounds(), out):
        np.testing.assert_array_equal(sp.bottom_circle.center, [0, 0, z0])
        np.testing.assert_array_equal(sp.top_circle.center, [0, 0, z1])


def test_drift_removed(spec):
    poses = [IDENTITY] * spec.n_segments
    poses[3] = PoseEstimate(np.eye(3), [10.0, 0.0, 0.0])
    out = continuity_correct(poses, spec)
    for k in range(1, spec.n_segments):
        gap = out[k].bottom_circle.center - out[k - 1].top_circle.center
        np.testing.assert_allclose(gap, [0, 0, spec.gap_heights[k - 1]], atol=1e-12)


def test_orientations_unchanged(spec, rng):
    poses = [random_rigid(rng, 20, 10) for _ in range(spec.n_segments)]
    out = continuity_correct(poses, spec)
    for p, sp in zip(poses, out):
        np.testing.assert_array_equal(p.rotation, sp.pose.rotation)


def test_chain_rule(spec, rng):
    out = continuity_correct([random_rigid(rng, 20, 10) for _ in range(spec.n_segments)], spec)
    for k in range(1, spec.n_segments):
        prev, cur = out[k - 1], out[k]
        d = unit(prev.top_circle.normal + cur.bottom_circle.normal)
        expect = prev.top_circle.center + spec.gap_heights[k - 1] * d
        assert np.linalg.norm(cur.bottom_circle.center - expect) < 1e-9


def test_wrong_pose_count(spec):
    with pytest.raises(SpecError):
        continuity_correct([IDENTITY], spec)


def test_antiparallel_segments(spec):
    poses = [IDENTITY] * spec.n_segments
    poses[1] = PoseEstimate(axis_angle_matrix([1, 0, 0], np.pi), np.zeros(3))
    with pytest.raises(DegenerateGeometryError):
        continuity_correct(poses, spec)


# gap interpolation

def test_interp_endpoints_exact():
    a = circle((1, 2, 3), (0.1, 0.2, 1), 10.0, 5.0)
    b = circle((2, 2, 9), (0.3, -0.1, 1), 12.0, 15.0)
    out = interp_gap(a, b, 7)
    assert len(out) == 7
    assert out[0] is a and out[-1] is b


def test_interp_equal_circles():
    a = circle((1, 2, 3), (0, 1, 1), 10.0, 5.0)
    for c in interp_gap(a, a, 5):
        np.testing.assert_allclose(c.center, a.center, atol=1e-15)
        np.testing.assert_allclose(c.normal, a.normal, atol=1e-15)
        assert c.radius == pytest.approx(a.radius) and c.twist == pytest.approx(a.twist)


def test_interp_midpoint_normal():
    mid = interp_gap(circle(normal=(0, 0, 1)), circle(normal=(1, 0, 0)), 3)[1]
    np.testing.assert_allclose(mid.normal, np.array([1, 0, 1]) / np.sqrt(2), atol=1e-15)


def test_interp_twist_short_way():
    mid = interp_gap(circle(twist=170.0), circle(twist=-170.0), 3)[1]
    assert mid.twist % 360 == pytest.approx(180.0)


def test_interp_antiparallel():
    with pytest.raises(DegenerateGeometryError):
        interp_gap(circle(normal=(0, 0, 1)), circle(normal=(0, 0, -1)), 3)


def test_interp_needs_two_steps():
    with pytest.raises(ValueError):
        interp_gap(circle(), circle(), 1)


def test_gap_circle_counts(spec, reference):
    shape = instantiate_shape([IDENTITY] * spec.n_segments, spec, reference)
    for h, gap in zip(spec.gap_heights, shape.gap_circles):
        assert len(gap) == round(h / spec.height_resolution) + 1


# gap-ring rotation

def test_gap_rotation_identity():
    np.testing.assert_array_equal(gap_rotation([0, 0, 1]), np.eye(3))


def test_gap_rotation_down():
    R = gap_rotation([0, 0, -1])
    np.testing.assert_allclose(R @ [0, 0, 1], [0, 0, -1], atol=1e-15)
    assert np.linalg.det(R) == pytest.approx(1.0)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_gap_rotation_proper(seed):
    n = unit(np.random.default_rng(seed).normal(size=3))
    R = gap_rotation(n)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
    assert abs(np.linalg.det(R) - 1) < 1e-10
    np.testing.assert_allclose(R @ [0, 0, 1], n, atol=1e-12)


def test_gap_vertices_identity():
    ring = gap_vertices(circle((1, 2, 3), radius=4.0), 10.0)
    t = np.deg2rad(np.arange(0, 360, 10.0))
    np.testing.assert_allclose(ring, np.column_stack([1 + 4 * np.cos(t), 2 + 4 * np.sin(t), np.full(36, 3.0)]),
                               atol=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_gap_vertices_in_plane(seed):
    r = np.random.default_rng(seed)
    c = circle(r.normal(size=3) * 50, r.normal(size=3), r.uniform(1, 20), r.uniform(-180, 180))
    ring = gap_vertices(c)
    assert np.abs((ring - c.center) @ c.normal).max() < 1e-9
    np.testing.assert_allclose(np.linalg.norm(ring - c.center, axis=1), c.radius, rtol=1e-12)


# twist

def test_twist_identity():
    assert segment_twist_from_pose(IDENTITY) == 0.0


def test_twist_pure():
    assert segment_twist_from_pose(PoseEstimate(rot_z(np.deg2rad(30)), np.zeros(3))) == pytest.approx(30.0)


@given(st.integers(0, 2**32 - 1))
def test_swing_twist_recomposes(seed):
    R = random_rigid(np.random.default_rng(seed), 170, 0).rotation
    swing, angle = swing_twist(R)
    np.testing.assert_allclose(swing @ rot_z(angle), R, atol=1e-10)
    np.testing.assert_allclose(swing, gap_rotation(R[:, 2]), atol=1e-9)


# boundary rings

def test_boundary_rings_agree(spec, rng):
    for _ in range(100):
        k = int(rng.integers(spec.n_segments - 1))
        pair = [random_rigid(rng, 30, 20) for _ in range(2)]
        poses = [IDENTITY] * spec.n_segments
        poses[k], poses[k + 1] = pair
        out = continuity_correct(poses, spec)
        for j, top in ((k, True), (k + 1, False)):
            sp = out[j]
            c = sp.top_circle if top else sp.bottom_circle
            assert np.abs(gap_vertices(c) - sp.pose.apply(design_ring(spec, j, top))).max() < 1e-9
            assert np.abs(gap_rotation(c.normal).T @ gap_rotation(c.normal) - np.eye(3)).max() < 1e-10


# full shape

def test_identity_shape(spec, reference):
    shape = instantiate_shape([IDENTITY] * spec.n_segments, spec, reference)
    assert np.abs(shape.mesh.vertices - reference.vertices).max() < 1e-9
    np.testing.assert_array_equal(shape.mesh.faces, reference.faces)
    for w0, w1 in zip(reference.wires, shape.mesh.wires):
        np.testing.assert_allclose(w0, w1, atol=1e-12)


def test_rigid_whole_device(spec, reference):
    """Moving every segment by the same rigid motion moves the mesh rigidly."""
    T = PoseEstimate(rotvec_matrix([0.2, -0.1, 0.3]), [5.0, -3.0, 2.0])
    shape = instantiate_shape([T] * spec.n_segments, spec, reference)
    assert np.abs(shape.mesh.vertices - T.apply(reference.vertices)).max() < 1e-9


def test_shape_json_roundtrip(spec, reference, tmp_path):
    import json
    shape = instantiate_shape([IDENTITY] * spec.n_segments, spec, reference)
    shape.to_json(tmp_path / "s.json")
    d = json.loads((tmp_path / "s.json").read_text())
    assert len(d["segments"]) == spec.n_segments
    assert len(d["gaps"]) == spec.n_segments - 1
    back = [PoseEstimate.from_dict(s["pose"]) for s in d["segments"]]
    np.testing.assert_allclose(back[2].rotation, np.eye(3))


def test_segment_pose_circles(spec):
    sp = segment_pose(2, PoseEstimate(np.eye(3), [1.0, 0, 0]), spec)
    z0, z1 = spec.segment_bounds()[2]
    np.testing.assert_allclose(sp.bottom_circle.center, [1, 0, z0])
    assert sp.top_circle.radius == spec.segments[2].graft_radius
