"""graspsynth command-line tool.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 IO/asset error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from graspsynth import __version__
from graspsynth import assets as A
from graspsynth import evalkit as E
from graspsynth import pipeline as P
from graspsynth import renderer as R
from graspsynth.viewsphere import SphereConfig, generate_viewpoints, viewpoint_table

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

VIEWPOINT_COLUMNS = ("index", "theta", "phi", "x", "y", "z", "roll", "pitch", "yaw")


class UsageError(Exception):
    pass


def _print_rows(rows, columns, fmt, out):
    if fmt == "json-lines":
        for r in rows:
            out.write(json.dumps({c: r[c] for c in columns}) + "\n")
        return
    out.write("  ".join(f"{c:>10}" for c in columns) + "\n")
    for r in rows:
        cells = [f"{r[c]:>10d}" if isinstance(r[c], int) else f"{r[c]:>10.5f}" for c in columns]
        out.write("  ".join(cells) + "\n")


def _emit(obj, fmt, table_text, out):
    if fmt == "json-lines":
        out.write(json.dumps(obj) + "\n")
    else:
        out.write(table_text.rstrip("\n") + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, out):
    cfg = P.load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, global_seed=args.seed)
    if args.dry_run:
        specs = P.enumerate_frames(cfg)
        manifest = P.build_manifest(cfg, specs)
        summary = {"frame_count": manifest.frame_count, "factors": manifest.factors,
                   "splits": manifest.split_counts()}
        text = "\n".join([f"frames {summary['frame_count']}"]
                         + [f"{k:<13}{v}" for k, v in summary["factors"].items()]
                         + [f"split {k:<7}{v}" for k, v in summary["splits"].items()])
        _emit(summary, args.format, text, out)
        return EXIT_OK
    if args.frame is not None:
        entry = P.generate_frame(cfg, args.frame, args.out)
        out.write(f"wrote {entry['path']}\n")
        return EXIT_OK
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")

    def progress(done, total):
        if args.verbose and (done == total or done % 50 == 0):
            sys.stderr.write(f"\r{done}/{total} frames")
            if done == total:
                sys.stderr.write("\n")

    manifest = P.generate_dataset(cfg, jobs=args.jobs, out_dir=args.out, progress=progress)
    out.write(f"wrote {manifest.frame_count} frames to {P.resolve_output_dir(cfg, args.out)}\n")
    for k, v in manifest.split_counts().items():
        out.write(f"  {k:<6}{v}\n")
    return EXIT_OK


def cmd_viewpoints(args, out):
    try:
        cfg = SphereConfig(args.r_sph, args.r_circ, not args.no_poles, frozenset(args.exclude))
        vps = generate_viewpoints(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _print_rows(viewpoint_table(vps), VIEWPOINT_COLUMNS, args.format, out)
    return EXIT_OK


def _load_rig_probe(args):
    rig = A.load_rig(args.rig) if args.rig else A.default_rig()
    mesh = A.load_mesh(args.probe_mesh, "probe") if args.probe_mesh else A.default_probe().mesh
    return rig, A.ProbeModel(mesh.with_label("probe"), args.z_offset)


def cmd_preview(args, out):
    w, h = args.size
    cfg = P.GenerationConfig(
        grasp_files=(str(args.grasp),),
        backgrounds=(f"color:{args.background}",),
        split={},
        sphere=SphereConfig(args.r_sph, args.r_circ),
        distances=(args.distance,),
        image_size=(w, h),
        global_seed=args.seed,
        rig_file=args.rig,
        probe_mesh=args.probe_mesh,
        z_offset=args.z_offset,
        shadows=args.shadows,
    )
    assets = P.SceneAssets(cfg)
    slot = [i for i, vp in enumerate(assets.viewpoints) if vp.index == args.viewpoint]
    if not slot:
        raise UsageError(f"viewpoint {args.viewpoint} not in 0..{len(assets.viewpoints) - 1}")
    gid = next(iter(assets.grasps))
    spec = P.FrameSpec(0, gid, 0, args.viewpoint, slot[0], args.distance, 0, 0, P.lighting_seed(args.seed, 0))
    scene, cam, record = P.assemble_scene(spec, cfg, assets)
    frames = R.render_frameset(scene, cam, cfg.render_config(spec.lighting_seed), gt=record)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(R.quantize_rgb(getattr(frames, args.pass_name)), "RGB").save(args.out, format="PNG")
    out.write(f"wrote {args.out}\n")
    return EXIT_OK


def cmd_validate(args, out):
    report = E.validate_dataset(args.dataset, sample=args.sample)
    if args.format == "json-lines":
        for frame, check, msg in report.failures:
            out.write(json.dumps({"frame_index": frame, "check": check, "message": msg}) + "\n")
        out.write(json.dumps({"ok": report.ok, "checked_frames": report.checked_frames,
                              "failures": len(report.failures)}) + "\n")
    else:
        out.write("\n".join(report.lines()) + "\n")
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_eval(args, out):
    preds = E.load_predictions(args.pred)
    split = None if args.split == "all" else args.split
    report = E.evaluate(preds, args.dataset, split)
    d = report.to_dict()
    if args.format == "json-lines":
        d.pop("per_frame")
    _emit(d, args.format, report.table(), out)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    return EXIT_OK


def cmd_export_gt(args, out):
    split = None if args.split == "all" else args.split
    preds = E.predictions_from_dataset(args.dataset, split, offset=np.asarray(args.offset))
    E.save_predictions(preds, args.out)
    out.write(f"wrote {len(preds.frames)} frame predictions to {args.out}\n")
    return EXIT_OK


def cmd_stats(args, out):
    stats = E.dataset_stats(args.dataset)
    if args.benchmark:
        with tempfile.TemporaryDirectory() as tmp:
            stats["benchmark"] = E.benchmark_throughput(args.dataset, args.benchmark, tmp)
    lines = [f"frames       {stats['frame_count']}"]
    lines += [f"{k:<13}{v}" for k, v in stats["factors"].items()]
    lines += [f"split {k:<7}{v}" for k, v in stats["splits"].items()]
    lines.append(f"flagged      {stats['flagged_frames']}")
    if "benchmark" in stats:
        b = stats["benchmark"]
        lines.append(f"benchmark    {b['frames']} frames at {b['image_size'][0]}x{b['image_size'][1]} "
                     f"in {b['seconds']:.2f} s ({b['frames_per_second']:.2f} frames/s, 1 worker)")
    _emit(stats, args.format, "\n".join(lines), out)
    return EXIT_OK


def cmd_grasp_check(args, out):
    rig, probe = _load_rig_probe(args)
    files = args.grasps or A.bundled_grasp_files()
    status = EXIT_OK
    rows = []
    for f in files:
        g = A.load_grasp(f)
        rep = A.validate_grasp(rig, g, probe, args.threshold)
        rows.append(dict(grasp_id=g.grasp_id, **rep.as_dict()))
        if rep.penetration or rep.contact_count == 0:
            status = EXIT_INVALID
    if args.format == "json-lines":
        for r in rows:
            out.write(json.dumps(r) + "\n")
    else:
        out.write(f"{'grasp':<12}{'contacts':>9}{'min_dist_mm':>13}  penetration\n")
        for r in rows:
            pen = "n/a" if r["penetration"] is None else ("yes" if r["penetration"] else "no")
            out.write(f"{r['grasp_id']:<12}{r['contact_count']:>9}{r['min_distance'] * 1000:>13.3f}  {pen}\n")
    return status


def cmd_init_demo(args, out):
    d = Path(args.directory)
    cfg = P.demo_config(d, image_size=tuple(args.size), viewpoint_indices=args.viewpoints,
                        n_grasps=args.grasps, n_backgrounds=args.backgrounds, global_seed=args.seed)
    path = d / "config.json"
    P.save_config(cfg, path)
    n = len(P.enumerate_frames(cfg))
    out.write(f"wrote {path} ({n} frames)\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _fmt(p, extra=()):
    p.add_argument("--format", choices=("table", "json-lines") + tuple(extra), default="table",
                   help="output format (default: table)")


def _asset_flags(p):
    p.add_argument("--rig", help="hand rig JSON (default: bundled rig)")
    p.add_argument("--probe-mesh", help="probe OBJ mesh (default: bundled probe)")
    p.add_argument("--z-offset", type=float, default=A.DEFAULT_Z_OFFSET, help="probe z-offset in metres")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspsynth",
                                     description="Synthetic hand/probe grasp frames and keypoint metrics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", help="render a dataset from a config file")
    p.add_argument("--config", required=True, help="generation config (JSON)")
    p.add_argument("--out", help="output directory (overrides $GRASPSYNTH_OUTPUT_DIR and the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--frame", type=int, help="re-render only this frame index")
    p.add_argument("--seed", type=int, help="override the config's global seed")
    p.add_argument("--dry-run", action="store_true", help="print frame and split counts without rendering")
    p.add_argument("-v", "--verbose", action="store_true", help="report progress on stderr")
    _fmt(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("viewpoints", help="list camera viewpoints on the sphere")
    p.add_argument("--r-sph", type=float, default=0.8, help="sphere radius in metres (default: 0.8)")
    p.add_argument("--r-circ", type=float, default=0.15, help="per-camera circle radius (default: 0.15)")
    p.add_argument("--no-poles", action="store_true", help="omit the two pole viewpoints")
    p.add_argument("--exclude", type=int, nargs="*", default=[], metavar="K", help="viewpoint indices to drop")
    _fmt(p)
    p.set_defaults(func=cmd_viewpoints)

    p = sub.add_parser("preview", help="render one grasp from one viewpoint to a PNG")
    p.add_argument("--grasp", required=True, help="grasp pose JSON")
    p.add_argument("--viewpoint", type=int, required=True, help="viewpoint index")
    p.add_argument("--distance", type=float, default=0.5, help="camera distance in metres (default: 0.5)")
    p.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("W", "H"), help="image size")
    p.add_argument("--r-sph", type=float, default=0.8, help="sphere radius (default: 0.8)")
    p.add_argument("--r-circ", type=float, default=0.15, help="circle radius (default: 0.15)")
    p.add_argument("--background", default="1,1,1", help="background colour r,g,b in [0, 1]")
    p.add_argument("--pass", dest="pass_name", default="rgb_gt_overlay",
                   choices=("rgb", "rgb_no_hand", "rgb_no_probe", "rgb_gt_overlay"), help="RGB pass to save")
    p.add_argument("--shadows", action="store_true", help="trace shadow rays")
    p.add_argument("--seed", type=int, default=0, help="lighting seed (default: 0)")
    p.add_argument("--out", default="preview.png", help="output PNG (default: preview.png)")
    _asset_flags(p)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("validate", help="check a generated dataset's integrity")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--sample", type=int, default=E.DEPTH_SEG_SAMPLE,
                   help="frames checked pixel-wise for depth/segmentation agreement")
    _fmt(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="MPJPE of predictions against dataset ground truth")
    p.add_argument("--pred", required=True, help="predictions JSON")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=P.SPLITS + ("all",), help="split (default: test)")
    p.add_argument("--report", help="also write the full report (with per-frame errors) here")
    _fmt(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-gt", help="write ground truth in prediction format")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="predictions JSON to write")
    p.add_argument("--split", default="all", choices=P.SPLITS + ("all",), help="split (default: all)")
    p.add_argument("--offset", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("DX", "DY", "DZ"),
                   help="shift every keypoint by this vector in metres")
    p.set_defaults(func=cmd_export_gt)

    p = sub.add_parser("stats", help="factor counts and split totals of a dataset")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--benchmark", type=int, default=0, metavar="N",
                   help="also time N single-worker frame renders")
    _fmt(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("grasp-check", help="contacts, clearance and penetration of grasp files")
    p.add_argument("grasps", nargs="*", help="grasp pose JSON files (default: bundled grasps)")
    p.add_argument("--threshold", type=float, default=A.DEFAULT_CONTACT_THRESHOLD,
                   help="contact distance in metres (default: 0.005)")
    _asset_flags(p)
    _fmt(p)
    p.set_defaults(func=cmd_grasp_check)

    p = sub.add_parser("init-demo", help="write demo backgrounds and a config over the bundled grasps")
    p.add_argument("directory", help="directory to create")
    p.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("W", "H"), help="image size")
    p.add_argument("--viewpoints", type=int, nargs="*", metavar="K",
                   help="keep only these viewpoint indices (default: all)")
    p.add_argument("--grasps", type=int, default=11, help="number of bundled grasps to use (default: 11)")
    p.add_argument("--backgrounds", type=int, default=8, help="number of demo backgrounds (default: 8)")
    p.add_argument("--seed", type=int, default=0, help="global seed (default: 0)")
    p.set_defaults(func=cmd_init_demo)
    return parser


def run(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args, out)
    except UsageError as exc:
        sys.stderr.write(f"graspsynth {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except (OSError, A.AssetError, P.ConfigError, P.FrameGenerationError, E.PredictionError) as exc:
        sys.stderr.write(f"graspsynth {args.command}: {exc}\n")
        return EXIT_IO
    except IndexError as exc:
        sys.stderr.write(f"graspsynth {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"graspsynth {args.command}: {exc}\n")
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
