"""Command-line front end.

Subcommands::

    model        reference graft mesh (OBJ) + spec and markers (JSON)
    simulate     deform, project and render every view (PGM + CSV + truth JSON)
    instantiate  image or detections -> per-segment poses -> shape (OBJ + JSON)
    evaluate     shape vs truth, or a full view sweep -> report (JSON + CSV)
    montecarlo   randomized trials -> aggregate CSV
    losses       detection loss table (CSV)

Exit codes: 0 success, 1 unexpected library error, 2 usage, 3 invalid
spec/config/input file, 4 marker correspondence, 5 marker out of frame,
6 degenerate geometry, 7 pose solve failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import detection, simulation
from .config import ExperimentConfig, load_schema
from .errors import CorrespondenceError, SpecError, StentShapeError
from .export import dump_json, spec_fingerprint, write_obj
from .graft_model import assemble_graft
from .instantiation import instantiate_shape
from .markers import write_markers_csv
from .projection import CameraModel, project, read_pgm, render_fluoro, write_pgm
from .rpnp import PoseEstimate, quartic_rows, rpnp_solve

log = logging.getLogger("stentshape")


def view_tag(angle):
    return f"view_{int(round(angle)):+04d}"


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.noise_sigma is not None:
        cfg.noise_sigma = args.noise_sigma
    if args.views:
        cfg.views = tuple(args.views)
    return cfg


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_json(path):
    p = Path(path)
    if not p.exists():
        raise SpecError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise SpecError(f"{p}: not valid JSON ({e})") from None


def cmd_model(args):
    cfg = _load(args)
    out = _out(args, cfg)
    mesh = assemble_graft(cfg.graft)
    markers = cfg.markers()
    write_obj(out / "graft.obj", mesh)
    cfg.graft.to_json(out / "graft_spec.json")
    markers.to_json(out / "markers.json")
    log.info("reference graft: %d vertices, %d faces, %d holes", len(mesh.vertices), len(mesh.faces), mesh.n_holes)
    return 0


def _truth(cfg, reference=None):
    return simulation.ground_truth(cfg.graft, cfg.deformation, cfg.markers(), reference)


def cmd_simulate(args):
    cfg = _load(args)
    out = _out(args, cfg)
    truth = _truth(cfg)
    render = dict(cfg.render)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.views))
    segs, types = truth.markers.segments(), truth.markers.types()
    for angle, ss in zip(cfg.views, seeds):
        rng = np.random.default_rng(ss)
        cam = cfg.camera_for(angle)
        uv = simulation.check_in_frame(cam, simulation.simulate_projections(truth, cam, cfg.noise_sigma, rng))
        tag = view_tag(angle)
        img = render_fluoro(cam, truth.markers.target(), blob_radius_px=render.get("blob_radius_px"),
                            noise_sigma=render.get("noise_sigma", 0.0), background=render.get("background", 0.0),
                            rng=rng, poisson=render.get("poisson", False), motion_blur=render.get("motion_blur", 0),
                            marker_ids=[m.id for m in truth.markers], at_pixels=uv)
        write_pgm(out / f"{tag}.pgm", img)
        write_markers_csv(out / f"{tag}.csv", uv, segs, types)
        cam.to_json(out / f"{tag}_camera.json")
    dump_json(out / "truth.json", {
        "spec_fingerprint": spec_fingerprint(cfg.graft.to_dict()),
        "seed": cfg.seed,
        "noise_sigma": cfg.noise_sigma,
        "views": list(cfg.views),
        "deformation": cfg.deformation.to_list(),
        "shape": truth.shape.to_dict(),
        "markers": truth.markers.to_dict()["markers"],
    })
    write_obj(out / "truth.obj", truth.mesh)
    log.info("simulated %d views into %s", len(cfg.views), out)
    return 0


def _camera(args, cfg) -> CameraModel:
    if args.camera:
        return CameraModel.from_dict(_read_json(args.camera))
    if args.view is None:
        raise SpecError("instantiate needs --view or --camera")
    return cfg.camera_for(args.view)


def _labelled_points(args, cfg, cam):
    """(uv, segments, types) for the input image or detection file."""
    markers = cfg.markers()
    det_cfg = dict(cfg.detector)
    segs = types = None
    if args.image:
        if not Path(args.image).exists():
            raise SpecError(f"image not found: {args.image}")
        image = read_pgm(args.image)
        dets = detection.detect_markers(image, det_cfg.get("intensity_threshold"),
                                        det_cfg.get("min_area_px", 3), det_cfg.get("max_area_px", 200),
                                        det_cfg.get("halo_px", 2))
        mask = detection.segment(image.intensities, det_cfg.get("intensity_threshold"))
        write_pgm(Path(args.out or cfg.output_dir) / "mask.pgm", mask.astype(np.uint8) * 255)
        detection.write_detections_csv(Path(args.out or cfg.output_dir) / "detections.csv", dets)
    else:
        if not Path(args.detections).exists():
            raise SpecError(f"detections not found: {args.detections}")
        dets, segs, types = detection.read_detections_csv(args.detections)
    uv = np.array([d.centroid for d in dets]).reshape(-1, 2)
    if segs is None or types is None:
        if not args.truth:
            raise CorrespondenceError("unlabelled detections need --truth to supply marker correspondence")
        truth_markers = _read_json(args.truth)["markers"]
        expected = project(cam, np.array([m["xyz_target"] for m in truth_markers]))
        uv, segs, types = simulation.label_detections(
            uv, expected, [m["segment"] for m in truth_markers], [m["type"] for m in truth_markers],
            det_cfg.get("match_radius_px", 5.0))
    segs, types = np.asarray(segs), np.asarray(types)
    for k in range(markers.n_segments):
        n = int(np.sum(segs == k))
        if n != len(markers.segment(k)):
            raise CorrespondenceError(f"segment {k}: found {n} marker(s), expected {len(markers.segment(k))}")
    if args.shuffle_labels:
        types = simulation.shuffle_labels(types, segs, np.random.default_rng(cfg.seed), args.shuffle_labels)
    return markers, uv, segs, types


QUARTIC_COLUMNS = ("segment", "subproblem", "a", "b", "c", "d", "e", "D1", "D2", "D3", "k", "cos_gamma3")


def write_quartics_csv(path, markers, uv, segs, types, cam):
    lookup = {(m.segment_index, m.type_label): m.position_ref for m in markers}
    rows = []
    for k in range(markers.n_segments):
        sel = np.flatnonzero(segs == k)
        P = np.array([lookup[(k, int(t))] for t in types[sel]])
        res = rpnp_solve(P, uv[sel], cam)
        rows += [{"segment": k, **r} for r in quartic_rows(res.subproblems)]
    Path(path).write_text(simulation.reports_to_csv(rows, QUARTIC_COLUMNS))


def cmd_instantiate(args):
    cfg = _load(args)
    out = _out(args, cfg)
    cam = _camera(args, cfg)
    markers, uv, segs, types = _labelled_points(args, cfg, cam)
    if args.debug_quartics:
        write_quartics_csv(out / "quartics.csv", markers, uv, segs, types, cam)
    result = simulation.run_pipeline(cfg.graft, markers, uv, cam, segments=segs, types=types, threads=args.threads)
    for k, t in enumerate(result.solve_times_ms):
        log.info("segment %d: pose solved in %.3f ms (rmse %.3g px)", k, t, result.poses[k].reprojection_rmse)
    write_obj(out / "shape.obj", result.shape.mesh)
    dump_json(out / "shape.json", {
        "spec_fingerprint": spec_fingerprint(cfg.graft.to_dict()),
        "camera": cam.to_dict(),
        "view_angle": args.view,
        "solve_time_ms": result.solve_times_ms,
        **result.shape.to_dict(),
    })
    return 0


def _shape_from_json(d, cfg):
    poses = [PoseEstimate.from_dict(s["pose"]) for s in d["segments"]]
    if len(poses) != cfg.graft.n_segments:
        raise SpecError(f"shape has {len(poses)} segments, config graft has {cfg.graft.n_segments}")
    return instantiate_shape(poses, cfg.graft, correct=False)


def report_dict(reports):
    reports = list(reports)
    cat = lambda attr: np.concatenate([getattr(r, attr) for r in reports]) if reports else np.zeros(0)

    def stats(x):
        return {"mean": float(x.mean()) if x.size else None, "std": float(x.std()) if x.size else None}

    clean = lambda v: None if isinstance(v, float) and np.isnan(v) else v
    return {
        "marker": stats(cat("marker_distances")),
        "angular": stats(cat("angular_errors")),
        "shape": stats(cat("vertex_distances")),
        "solve_time_ms": [t for r in reports for t in r.solve_times_ms],
        "per_marker_mm": [float(v) for v in cat("marker_distances")],
        "per_marker_deg": [float(v) for v in cat("angular_errors")],
        "views": [{k: clean(v) for k, v in r.summary().items()} for r in reports],
    }


def write_report(out, reports, stem="report"):
    d = report_dict(reports)
    jsonschema.validate(d, load_schema("report.schema.json"))
    dump_json(out / f"{stem}.json", d)
    (out / f"{stem}.csv").write_text(simulation.reports_to_csv(reports))
    return d


def cmd_evaluate(args):
    cfg = _load(args)
    out = _out(args, cfg)
    if args.sweep:
        reports = simulation.view_sweep(cfg.graft, cfg.deformation, cfg.views, cfg.noise_sigma, cfg.seed,
                                        args.trials, cfg.markers(), cfg.camera_kwargs(), not args.no_shape,
                                        args.threads)
        d = write_report(out, reports, "sweep")
        log.info("sweep: %d rows, marker mean %.3g mm", len(reports), d["marker"]["mean"])
        return 0
    if not (args.shape and args.truth):
        raise SpecError("evaluate needs --shape and --truth, or --sweep")
    shape_d, truth_d = _read_json(args.shape), _read_json(args.truth)
    fp = spec_fingerprint(cfg.graft.to_dict())
    for name, d in (("shape", shape_d), ("truth", truth_d)):
        if d.get("spec_fingerprint") not in (None, fp):
            raise SpecError(f"{name} file was produced from a different graft spec")
    shape = _shape_from_json(shape_d, cfg)
    reference = assemble_graft(cfg.graft)
    truth = simulation.ground_truth(cfg.graft, simulation.Deformation.from_list(truth_d["deformation"]),
                                    cfg.markers(), reference)
    result = simulation.PipelineResult(shape, [sp.pose for sp in shape.segment_poses],
                                       list(shape_d.get("solve_time_ms", [])))
    angle = shape_d.get("view_angle")
    rep = simulation.evaluate(result, truth, not args.no_shape, angle)
    write_report(out, [rep])
    log.info("marker error %.4g +- %.4g mm, angular %.4g deg, shape %.4g mm",
             rep.marker_mean, rep.marker_std, rep.angular_mean, rep.shape_mean)
    return 0


def cmd_montecarlo(args):
    cfg = _load(args)
    mc = dict(cfg.montecarlo)
    n = args.trials if args.trials is not None else int(mc.pop("n_trials", 100))
    mc.pop("n_trials", None)
    sigmas = args.sigmas if args.sigmas else [cfg.noise_sigma]
    rows = []
    for sigma in sigmas:
        rows += simulation.monte_carlo(cfg.graft, n, cfg.seed, sigma, cfg.views, cfg.markers(), cfg.camera_kwargs(),
                                       mc, with_shape=args.shape, threads=args.threads)
    text = simulation.reports_to_csv(rows, simulation.MC_COLUMNS)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "montecarlo.csv"
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "montecarlo.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    for sigma in sigmas:
        sel = [r for r in rows if r["noise_sigma"] == sigma]
        print(f"sigma={sigma:g} px: median marker error {np.median([r['marker_mean_mm'] for r in sel]):.4g} mm, "
              f"median angular error {np.median([r['angular_mean_deg'] for r in sel]):.4g} deg, "
              f"max marker error {max(r['marker_max_mm'] for r in sel):.3g} mm")
    return 0


def cmd_losses(args):
    params = detection.LossParams(args.w_pos, args.w_neg, args.gamma)
    pt = np.linspace(args.pt_min, 1.0, args.steps)
    print("p_t,y,cross_entropy,weighted,focal")
    for y in (1, 0):
        yy = np.full_like(pt, y)
        ce = detection.cross_entropy(pt)
        wl = detection.weighted_loss(pt, yy, params)
        fl = detection.focal_loss(pt, yy, params)
        for row in zip(pt, ce + 0.0, wl + 0.0, fl + 0.0):
            print(f"{row[0]:.4f},{y},{abs(row[1]):.6f},{abs(row[2]):.6f},{abs(row[3]):.6f}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (default: shipped default-device config)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (montecarlo: CSV path or directory)")
    common.add_argument("--noise-sigma", type=float, help="pixel noise on marker projections")
    common.add_argument("--views", type=float, nargs="+", help="C-arm angles in degrees")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--debug-quartics", action="store_true", help="dump per-segment quartic coefficients")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stentshape", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("model", parents=[common], help="reference graft mesh").set_defaults(func=cmd_model)
    sub.add_parser("simulate", parents=[common], help="synthetic views").set_defaults(func=cmd_simulate)

    s = sub.add_parser("instantiate", parents=[common], help="shape from one view")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="PGM fluoroscopic image")
    src.add_argument("--detections", help="CSV with u, v[, area, segment, type]")
    s.add_argument("--view", type=float, help="C-arm angle of the input")
    s.add_argument("--camera", help="camera JSON (overrides --view)")
    s.add_argument("--truth", help="truth JSON supplying marker correspondence")
    s.add_argument("--shuffle-labels", type=int, default=0, metavar="N",
                   help="swap type labels of N marker pairs to emulate misclassification")
    s.set_defaults(func=cmd_instantiate)

    e = sub.add_parser("evaluate", parents=[common], help="error report")
    e.add_argument("--shape")
    e.add_argument("--truth")
    e.add_argument("--sweep", action="store_true", help="run the full pipeline at every configured view")
    e.add_argument("--trials", type=int, default=1, help="noise trials per view (sweep)")
    e.add_argument("--no-shape", action="store_true", help="skip the mesh distance metric")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("montecarlo", parents=[common], help="randomized trials")
    m.add_argument("--trials", type=int)
    m.add_argument("--sigmas", type=float, nargs="+", help="noise levels for a sweep")
    m.add_argument("--shape", action="store_true", help="also compute the mesh distance metric")
    m.set_defaults(func=cmd_montecarlo)

    lo = sub.add_parser("losses", help="detection loss table")
    lo.add_argument("--w-pos", type=float, default=30.0)
    lo.add_argument("--w-neg", type=float, default=1.0)
    lo.add_argument("--gamma", type=float, default=2.0)
    lo.add_argument("--pt-min", type=float, default=0.01)
    lo.add_argument("--steps", type=int, default=100)
    lo.set_defaults(func=cmd_losses)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StentShapeError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
