import csv
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from stentshape.cli import main
from stentshape.config import ExperimentConfig, load_schema
from stentshape.export import read_obj
from stentshape.graft_model import assemble_graft
from stentshape.projection import read_pgm


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out)]) == 0
    return out


def run(*argv):
    return main([str(a) for a in argv])


def test_model_deterministic(tmp_path, spec):
    assert run("model", "--out", tmp_path / "a") == 0
    assert run("model", "--out", tmp_path / "b") == 0
    a, b = (tmp_path / "a" / "graft.obj").read_bytes(), (tmp_path / "b" / "graft.obj").read_bytes()
    assert a == b
    v, f, _ = read_obj(tmp_path / "a" / "graft.obj")
    assert len(f) == len(assemble_graft(spec).faces)
    assert json.loads((tmp_path / "a" / "markers.json").read_text())["markers"]


def test_model_plain_cylinders(tmp_path):
    d = ExperimentConfig.load().to_dict()
    d["graft"]["fenestrations"] = []
    d["graft"]["scallops"] = []
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert run("model", "--config", tmp_path / "c.json", "--out", tmp_path) == 0
    _, f, _ = read_obj(tmp_path / "graft.obj")
    mesh = assemble_graft(ExperimentConfig.load(tmp_path / "c.json").graft)
    assert mesh.n_holes == 0 and len(f) == len(mesh.faces)


def test_simulate_outputs(sim_dir):
    assert len(list(sim_dir.glob("view_*.pgm"))) == 13
    assert len(list(sim_dir.glob("view_*.csv"))) == 13
    truth = json.loads((sim_dir / "truth.json").read_text())
    assert len(truth["markers"]) == 30 and truth["views"][0] == -90


def test_zero_deformation_projections(tmp_path, markers):
    d = ExperimentConfig.load().to_dict()
    d["deformation"] = [{} for _ in d["deformation"]]
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert run("simulate", "--config", tmp_path / "c.json", "--views", 0, "--out", tmp_path) == 0
    cam = ExperimentConfig.load().camera_for(0.0)
    from stentshape.projection import project
    with open(tmp_path / "view_+000.csv") as f:
        uv = np.array([[float(r["u"]), float(r["v"])] for r in csv.DictReader(f)])
    np.testing.assert_allclose(uv, project(cam, markers.reference()), atol=1e-12)


def test_simulate_seeded_noise(tmp_path):
    args = ["simulate", "--views", "15", "--noise-sigma", "0.5", "--seed", "4"]
    run(*args, "--out", tmp_path / "a")
    run(*args, "--out", tmp_path / "b")
    run("simulate", "--views", "15", "--noise-sigma", "0.5", "--seed", "5", "--out", tmp_path / "c")
    a = (tmp_path / "a" / "view_+015.pgm").read_bytes()
    assert a == (tmp_path / "b" / "view_+015.pgm").read_bytes()
    assert a != (tmp_path / "c" / "view_+015.pgm").read_bytes()


def test_instantiate_detections_and_self_eval(sim_dir, tmp_path):
    out = tmp_path / "inst"
    assert run("instantiate", "--detections", sim_dir / "view_+045.csv", "--view", 45, "--out", out,
               "--debug-quartics") == 0
    rows = list(csv.DictReader(open(out / "quartics.csv")))
    assert len(rows) == 6 * 3
    assert run("evaluate", "--shape", out / "shape.json", "--truth", sim_dir / "truth.json", "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    jsonschema.validate(rep, load_schema("report.schema.json"))
    assert rep["marker"]["mean"] < 1e-6 and rep["shape"]["mean"] < 1e-6


def test_instantiate_from_image(sim_dir, tmp_path):
    assert run("instantiate", "--image", sim_dir / "view_+000.pgm", "--view", 0, "--truth",
               sim_dir / "truth.json", "--out", tmp_path) == 0
    assert read_pgm(tmp_path / "mask.pgm").intensities.shape == (512, 512)
    assert run("evaluate", "--shape", tmp_path / "shape.json", "--truth", sim_dir / "truth.json",
               "--out", tmp_path, "--no-shape") == 0
    assert json.loads((tmp_path / "report.json").read_text())["marker"]["mean"] < 0.05


def test_missing_marker_exit(sim_dir, tmp_path, capsys):
    lines = (sim_dir / "view_+000.csv").read_text().splitlines()
    drop = next(i for i, l in enumerate(lines[1:], 1) if l.split(",")[2] == "3")
    (tmp_path / "d.csv").write_text("\n".join(lines[:drop] + lines[drop + 1:]) + "\n")
    assert run("instantiate", "--detections", tmp_path / "d.csv", "--view", 0, "--out", tmp_path) == 4
    assert "segment 3" in capsys.readouterr().err


def test_self_evaluation_zero(sim_dir, tmp_path):
    truth = json.loads((sim_dir / "truth.json").read_text())
    (tmp_path / "shape.json").write_text(json.dumps(truth["shape"]))
    assert run("evaluate", "--shape", tmp_path / "shape.json", "--truth", sim_dir / "truth.json",
               "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["marker"]["mean"] == 0 and rep["angular"]["mean"] == 0 and rep["shape"]["mean"] == 0


def test_mismatched_spec(sim_dir, tmp_path):
    truth = json.loads((sim_dir / "truth.json").read_text())
    truth["spec_fingerprint"] = "0" * 16
    (tmp_path / "t.json").write_text(json.dumps(truth))
    assert run("evaluate", "--shape", tmp_path / "t.json", "--truth", tmp_path / "t.json", "--out", tmp_path) == 3


def test_sweep_rows(tmp_path):
    assert run("evaluate", "--sweep", "--no-shape", "--out", tmp_path) == 0
    assert len((tmp_path / "sweep.csv").read_text().strip().splitlines()) == 14
    jsonschema.validate(json.loads((tmp_path / "sweep.json").read_text()), load_schema("report.schema.json"))


def test_montecarlo_cli(tmp_path, capsys):
    assert run("montecarlo", "--trials", 5, "--sigmas", 0, 0.5, "--seed", 1, "--out", tmp_path / "mc.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "mc.csv")))
    assert len(rows) == 10
    assert "sigma=0.5" in capsys.readouterr().out
    assert run("montecarlo", "--trials", 0, "--out", tmp_path / "x.csv") == 3


def test_losses(capsys):
    assert run("losses", "--steps", 3) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "p_t,y,cross_entropy,weighted,focal" and len(out) == 7
    assert "-" not in "".join(out[1:])


def test_unknown_graft_key(tmp_path):
    d = ExperimentConfig.load().to_dict()
    d["graft"]["openings"] = []
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert run("model", "--config", tmp_path / "c.json", "--out", tmp_path) == 3


def test_bad_config_exit(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    assert run("model", "--config", tmp_path / "bad.json", "--out", tmp_path) == 3


def test_usage_exit():
    with pytest.raises(SystemExit) as e:
        main(["nonsense"])
    assert e.value.code == 2


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "stentshape.cli", "model", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "graft.obj").exists()
