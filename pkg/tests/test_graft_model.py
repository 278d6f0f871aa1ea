import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stentshape.errors import SpecError
from stentshape.graft_model import (
    HOLE,
    DEFAULT_SEGMENT_HEIGHTS,
    FenestrationSpec,
    GraftSpec,
    ScallopSpec,
    SegmentSpec,
    assemble_graft,
    circle_vertices,
    cut_openings,
    level_layout,
    opening_mask,
    snap_stent_to_edges,
    stent_vertices,
)


def plain(n_segments=1, height=10.0, gaps=None, **kw):
    segs = [SegmentSpec(11.5, 15.0, height, 60, 5, 15.0) for _ in range(n_segments)]
    return GraftSpec(segs, gaps if gaps is not None else [2.0] * (n_segments - 1), **kw)


# circle_vertices

def test_circle_first_vertex():
    np.testing.assert_array_equal(circle_vertices(11.5, 0.0, 1.0)[0], [11.5, 0.0, 0.0])


def test_circle_axis_cases():
    ring = circle_vertices(1.0, 2.0, 90.0)
    np.testing.assert_allclose(ring, [[1, 0, 2], [0, 1, 2], [-1, 0, 2], [0, -1, 2]], atol=1e-15)


@pytest.mark.parametrize("res", [0.5, 1.0, 2.0, 7.5, 45.0])
def test_circle_centroid_and_count(res):
    ring = circle_vertices(3.0, 4.5, res)
    assert len(ring) == round(360 / res)
    np.testing.assert_allclose(ring.mean(axis=0), [0, 0, 4.5], atol=1e-12)


@pytest.mark.parametrize("r,res", [(0.0, 1.0), (-1.0, 1.0), (1.0, 7.0), (1.0, 0.0)])
def test_circle_rejects(r, res):
    with pytest.raises(SpecError):
        circle_vertices(r, 0.0, res)


# stent_vertices

def test_stent_radius_formula_extremes():
    seg = SegmentSpec(11.5, 15.0, 17.0, 60, 5, 15.0)
    w = stent_vertices(seg)
    r = np.hypot(w[:, 0], w[:, 1])
    # N_v/N_s = 12 vertices per cycle: i = 3 is a peak, i = 9 a trough
    assert r[2] == pytest.approx(15.0, abs=1e-12)
    assert r[8] == pytest.approx(11.5, abs=1e-12)
    assert w[2, 2] == pytest.approx(8.5)
    # sin = 0 -> midpoint radius
    assert r[5] == pytest.approx(13.25, abs=1e-12)
    assert w[-1, 2] == pytest.approx(0.0, abs=1e-12)
    assert len(w) == 60


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10_000), st.floats(1.0, 40.0), st.floats(5, 20), st.floats(0, 10))
def test_stent_bounds(n_s, extra, h, r_n, dr):
    seg = SegmentSpec(r_n, r_n + dr, h, 3 * n_s + extra, n_s, r_n + dr)
    w = stent_vertices(seg)
    r = np.hypot(w[:, 0], w[:, 1])
    assert len(w) == seg.N_v
    assert np.all(r >= r_n - 1e-9) and np.all(r <= r_n + dr + 1e-9)
    assert np.all(np.abs(w[:, 2]) <= h / 2 + 1e-9)


@pytest.mark.parametrize("kw", [dict(r_n=16.0), dict(h_prime=0.0), dict(N_s=0), dict(N_v=14), dict(graft_radius=0)])
def test_segment_spec_invariants(kw):
    base = dict(r_n=11.5, r_x=15.0, h_prime=10.0, N_v=60, N_s=5, graft_radius=15.0)
    base.update(kw)
    with pytest.raises(SpecError):
        SegmentSpec(**base)


def test_graft_spec_invariants():
    seg = SegmentSpec(11.5, 15.0, 10.0, 60, 5, 15.0)
    with pytest.raises(SpecError):
        GraftSpec([], [])
    with pytest.raises(SpecError):
        GraftSpec([seg, seg], [])
    with pytest.raises(SpecError):
        GraftSpec([seg, seg], [0.0])
    with pytest.raises(SpecError):
        GraftSpec([seg], [], angular_resolution=7.0)


# assemble / default device

def test_default_device_heights(spec):
    assert tuple(s.h_prime for s in spec.segments) == DEFAULT_SEGMENT_HEIGHTS
    assert all((s.r_n, s.r_x) == (11.5, 15.0) for s in spec.segments)
    assert spec.total_height == 117.0


def test_ring_count(spec, reference):
    n_levels = int(spec.total_height / spec.height_resolution) + 1
    assert reference.grid.shape == (n_levels, 360)


def test_vertices_on_cylinder(spec, reference):
    layout = level_layout(spec)
    lev = np.argwhere(reference.grid != HOLE)[:, 0]
    order = reference.grid[reference.grid != HOLE]
    r = np.hypot(reference.vertices[order, 0], reference.vertices[order, 1])
    np.testing.assert_allclose(r, layout.radius[lev], atol=1e-9)


def test_faces_valid_and_outward(reference):
    f = reference.faces
    assert f.min() >= 0 and f.max() < len(reference.vertices)
    assert not np.isin(f, HOLE).any()
    v = reference.vertices[f]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    c = v.mean(axis=1)
    radial = np.column_stack([c[:, 0], c[:, 1], np.zeros(len(c))])
    assert np.all(np.einsum("ij,ij->i", n, radial) > 0)


def test_hole_count_equals_contained_cells(spec, reference):
    # containment oracle written independently of opening_mask
    top = spec.total_height
    count = 0
    for lev in range(reference.grid.shape[0]):
        for a in range(360):
            inside = False
            for fen in spec.fenestrations:
                ds = math.radians((a - fen.center_angle + 180) % 360 - 180) * 15.0
                dt = lev - fen.center_height
                inside |= (ds / (15.0 * math.radians(fen.angular_width) / 2)) ** 2 + (dt / (fen.height_extent / 2)) ** 2 <= 1
            for sc in spec.scallops:
                w = 15.0 * math.radians(sc.angular_width) / 2
                ds = math.radians((a - sc.center_angle + 180) % 360 - 180) * 15.0
                dt = lev - (top - sc.height_extent)
                inside |= (abs(ds) <= w and w <= dt <= sc.height_extent) or ds * ds + (dt - w) ** 2 <= w * w
            count += inside
    assert reference.n_holes == count > 0


def test_single_cylinder_topology():
    mesh = assemble_graft(plain(1, 10.0))
    assert mesh.n_holes == 0
    assert mesh.euler_characteristic() == 0  # open tube: two boundary loops
    assert len(mesh.faces) == 2 * 360 * 10


def test_default_device_topology(reference):
    # open tube (chi = 0) with two interior fenestrations; the scallop only notches the top rim
    assert reference.euler_characteristic() == -2


def test_empty_openings_identity():
    s = plain(2, 10.0)
    mesh = assemble_graft(s)
    assert cut_openings(mesh, s) is mesh


def test_full_circumference_opening_removes_ring():
    s = plain(1, 20.0, fenestrations=[FenestrationSpec(0.0, 10.0, 360.0, 1.0)])
    mesh = assemble_graft(s)
    assert np.all(mesh.grid[10] == HOLE)
    assert np.all(mesh.grid[9] != HOLE) and np.all(mesh.grid[11] != HOLE)


def test_opening_out_of_bounds():
    s = plain(1, 10.0, fenestrations=[FenestrationSpec(0.0, 9.0, 20.0, 6.0)])
    with pytest.raises(SpecError):
        assemble_graft(s)


def test_cut_never_removes_outside(spec, reference):
    layout = level_layout(spec)
    removed = reference.grid == HOLE
    inside = opening_mask(spec, layout)
    assert np.array_equal(removed, inside)


def test_deterministic(spec, reference):
    again = assemble_graft(spec)
    assert np.array_equal(again.vertices, reference.vertices)
    assert np.array_equal(again.faces, reference.faces)


def test_spec_json_roundtrip(spec, tmp_path):
    p = tmp_path / "g.json"
    spec.to_json(p)
    assert GraftSpec.from_json(p) == spec
    with pytest.raises(SpecError):
        GraftSpec.from_dict({"gap_heights": []})


# snapping

def test_snap_no_intersection():
    w = np.array([[15.0, 0.0, 5.0], [0.0, 15.0, 5.0]])
    fen = FenestrationSpec(180.0, 5.0, 20.0, 4.0)
    np.testing.assert_array_equal(snap_stent_to_edges(w, [fen], 15.0, 10.0), w)


def test_snap_center_to_min_half_axis():
    fen = FenestrationSpec(90.0, 5.0, 20.0, 4.0)  # half width 2.62 mm arc, half height 2 mm
    w = np.array([[0.0, 15.0, 5.0]])
    out = snap_stent_to_edges(w, [fen], 15.0, 10.0)
    theta = np.rad2deg(np.arctan2(out[0, 1], out[0, 0]))
    moved = math.hypot(np.deg2rad(theta - 90.0) * 15.0, out[0, 2] - 5.0)
    assert moved == pytest.approx(min(15.0 * math.radians(10.0), 2.0), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(5, 60), st.floats(1, 8))
def test_snap_lands_on_boundary(fs, ft, width, extent):
    fen = FenestrationSpec(30.0, 10.0, width, extent)
    a, b = fen.semi_axes(15.0)
    theta = 30.0 + np.rad2deg(fs * a * 0.99 / 15.0)
    z = 10.0 + ft * b * 0.99 * math.sqrt(max(0.0, 1 - fs * fs))
    w = np.array([[15 * math.cos(math.radians(theta)), 15 * math.sin(math.radians(theta)), z]])
    out = snap_stent_to_edges(w, [fen], 15.0, 20.0)
    th = np.rad2deg(np.arctan2(out[0, 1], out[0, 0]))
    assert abs(fen.boundary_residual(th, out[0, 2], 15.0, 20.0)) < 1e-9
    assert np.hypot(out[0, 0], out[0, 1]) == pytest.approx(15.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(0.01, 0.99))
def test_snap_scallop_boundary(fs, ft):
    sc = ScallopSpec(0.0, 40.0, 10.0)
    top = 20.0
    w_half = sc.half_width(15.0)
    s, t = fs * w_half, ft * sc.height_extent
    if not sc.contains(np.rad2deg(s / 15.0), top - 10.0 + t, 15.0, top, tol=-1e-12):
        return
    theta = np.rad2deg(s / 15.0)
    wire = np.array([[15 * math.cos(math.radians(theta)), 15 * math.sin(math.radians(theta)), top - 10.0 + t]])
    out = snap_stent_to_edges(wire, [sc], 15.0, top)
    th = np.rad2deg(np.arctan2(out[0, 1], out[0, 0]))
    assert sc.boundary_residual(th, out[0, 2], 15.0, top) < 1e-9


def test_wires_outside_openings(spec, reference):
    top = spec.total_height
    for k, w in enumerate(reference.wires):
        th = np.rad2deg(np.arctan2(w[:, 1], w[:, 0])) % 360
        for o in spec.openings:
            assert not np.any(o.contains(th, w[:, 2], 15.0, top, tol=-1e-9))


def test_opening_validation():
    with pytest.raises(SpecError):
        FenestrationSpec(0.0, 5.0, 0.0, 1.0)
    with pytest.raises(SpecError):
        ScallopSpec(0.0, 10.0, -1.0)
