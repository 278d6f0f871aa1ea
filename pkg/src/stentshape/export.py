"""Wavefront OBJ and JSON helpers."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .graft_model import Mesh


def obj_text(mesh: Mesh, wires=True):
    """OBJ with `v` and `f` records; stent wires become `l` polylines."""
    lines = ["# stentshape mesh"]
    lines += [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    if wires:
        base = len(mesh.vertices)
        for w in mesh.wires:
            lines += [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in w]
            idx = " ".join(str(base + i + 1) for i in range(len(w)))
            lines.append(f"l {idx}")
            base += len(w)
    return "\n".join(lines) + "\n"


def write_obj(path, mesh: Mesh, wires=True):
    with open(path, "w") as f:
        f.write(obj_text(mesh, wires))


def read_obj(path):
    """(vertices, faces, polylines) from an OBJ file; indices zero-based."""
    v, f, lines = [], [], []
    with open(path) as fh:
        for row in fh:
            parts = row.split()
            if not parts:
                continue
            if parts[0] == "v":
                v.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                f.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
            elif parts[0] == "l":
                lines.append([int(p) - 1 for p in parts[1:]])
    return np.array(v), np.array(f, dtype=int).reshape(-1, 3), lines


def spec_fingerprint(spec_dict):
    """Short stable hash of a graft spec, used to catch mismatched artifacts."""
    blob = json.dumps(spec_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, allow_nan=True)
        f.write("\n")
