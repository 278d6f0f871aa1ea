"""Build the reference six-segment graft and look at what it is made of."""

import sys
from pathlib import Path

import numpy as np

from stentshape.export import write_obj
from stentshape.graft_model import assemble_graft, default_device
from stentshape.markers import place_markers

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# The device: six stent segments separated by short fabric gaps, with one
# fenestration and one scallop cut out of the fabric.
spec = default_device()
for k, ((z0, z1), seg) in enumerate(zip(spec.segment_bounds(), spec.segments)):
    print(f"segment {k}: z {z0:6.1f} .. {z1:6.1f} mm, {seg.N_v} wire peaks, radius {seg.graft_radius} mm")
print("gap heights:", spec.gap_heights)

# The mesh is a grid of rings (one per height step, one vertex per degree);
# openings remove vertices, which changes the topology.
mesh = assemble_graft(spec)
print(f"{len(mesh.vertices)} vertices, {len(mesh.faces)} faces, {mesh.n_holes} removed by openings")
print("Euler characteristic:", mesh.euler_characteristic(), "(an open tube is 0, each hole subtracts 1)")

# Five markers per segment, at distinct heights and angles so that no four
# of them are coplanar.
markers = place_markers(spec)
P = markers.reference()
print("markers per segment:", np.bincount(markers.segments()))
print("segment 0 markers (mm):")
print(np.round(P[markers.segments() == 0], 2))

write_obj(out / "graft.obj", mesh)
print("wrote", out / "graft.obj")
