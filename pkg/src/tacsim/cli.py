"""Command line front end.

Subcommands: scene, render, calibrate (optics | lights | markers),
compare, bench. Exit codes: 0 success, 1 usage, 2 validation or file
problems, 3 numerical failure. --porcelain switches output to
line-oriented key=value records; TACSIM_CONFIG names the default sensor
config.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import config_io
from .errors import NumericalError, ValidationError
from .marker import (MotionObservation, fit_lambdas, flow_image,
                     read_displacement_table)
from .metrics import fmt_metric, image_metrics, marker_l1
from .mlp import ReflectanceModel
from .optics import (CalibrationImage, TrainingConfig, build_rgb_normal_dataset,
                     model_background_residual, train_reflectance)
from .pipeline import (BENCH_STAGES, MIN_BENCH_ITERATIONS, bench_stage,
                       render_frame)
from .scene import ContactPose, IndenterShape, contact_state, render_height_map
from .shadow import BallObservation, calibrate_lights

ENV_CONFIG = "TACSIM_CONFIG"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _common(p):
    p.add_argument("--config", help=f"sensor config file (default: ${ENV_CONFIG} "
                                    "or the bundled digit config)")
    p.add_argument("--porcelain", action="store_true",
                   help="machine-readable key=value output")
    p.add_argument("--seed", type=int, default=0, help="random seed")


def _load_cfg(args):
    path = args.config or os.environ.get(ENV_CONFIG)
    if path:
        return config_io.load_config(path)
    return config_io.load_bundled_config("digit")


def _parse_pair(raw, what):
    parts = raw.split(",")
    if len(parts) != 2:
        raise ValidationError(f"expected 'x,y', got {raw!r}", field=what)
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ValidationError(f"non-numeric pair {raw!r}", field=what) from None


def _emit(args, porcelain_lines, human):
    if args.porcelain:
        sys.stdout.write("".join(f"{k}={v}\n" for k, v in porcelain_lines))
    else:
        sys.stdout.write(human if human.endswith("\n") else human + "\n")


def _load_heightmap(path):
    if path.lower().endswith(".png"):
        return config_io.load_heightmap_png(path)
    return config_io.load_heightmap(path)


def _save_heightmap(path, hm, png_scale):
    if path.lower().endswith(".png"):
        config_io.save_heightmap_png(path, hm, png_scale)
    else:
        config_io.save_heightmap(path, hm)


# ------------------------------------------------------------------ scene

def _shape_from_args(args):
    kind = args.shape
    if kind in ("sphere", "cylinder"):
        if args.radius is None:
            raise _UsageError(f"{kind} needs --radius")
        return (IndenterShape.sphere(args.radius) if kind == "sphere"
                else IndenterShape.cylinder(args.radius))
    if kind == "cuboid":
        if args.width_mm is None or args.length_mm is None:
            raise _UsageError("cuboid needs --width-mm and --length-mm")
        return IndenterShape.cuboid(args.width_mm, args.length_mm)
    if kind == "prism":
        if args.side_mm is None:
            raise _UsageError("prism needs --side-mm")
        return IndenterShape.prism(args.side_mm)
    if args.radius is None or args.tip_height_mm is None:
        raise _UsageError("cone needs --radius and --tip-height-mm")
    return IndenterShape.cone(args.radius, args.tip_height_mm)


def cmd_scene(args):
    cfg = _load_cfg(args)
    geom = cfg.geometry
    shape = _shape_from_args(args)
    if args.center:
        center = _parse_pair(args.center, "center")
    else:
        center = (geom.area_mm[0] / 2.0, geom.area_mm[1] / 2.0)
    pose = ContactPose(center, args.depth, twist_deg=args.twist)
    hm = render_height_map(shape, pose, geom)
    _save_heightmap(args.out, hm, args.png_scale)
    contact = contact_state(hm, pose, cfg.contact_threshold_mm)
    peak = float(hm.data.max())
    _emit(args, [
        ("out", args.out), ("width", geom.width), ("height", geom.height),
        ("contact_pixels", contact.count), ("peak_mm", f"{peak:.6f}"),
    ], f"wrote {args.out}: {geom.width}x{geom.height}, "
       f"{contact.count} contact pixels, peak {peak:.4f} mm")
    return 0


# ------------------------------------------------------------------ render

def cmd_render(args):
    cfg = _load_cfg(args)
    hm = _load_heightmap(args.heightmap)
    model_path = args.model or cfg.model_path
    if not model_path:
        raise ValidationError(
            "no reflectance model configured; run 'tacsim calibrate optics' "
            "or pass --model", field="paths.reflectance_model")
    bg_path = args.background or cfg.background_path
    if not bg_path:
        raise ValidationError(
            "no background image configured; pass --background or set "
            "paths.background_image", field="paths.background_image")
    model = config_io.load_model(model_path)
    background = config_io.load_image_png(bg_path)
    contact = None
    if args.markers:
        contact = contact_state(hm, None, cfg.contact_threshold_mm)
        contact.shear_mm = _parse_pair(args.shear, "shear") if args.shear else (0.0, 0.0)
        contact.twist_deg = args.twist
        if args.anchor:
            contact.center = _parse_pair(args.anchor, "anchor")
    img, motion = render_frame(hm, cfg, model, background, shadows=args.shadows,
                               markers=args.markers, contact=contact,
                               stride=args.stride)
    config_io.save_image_png(args.out, img)
    lines = [("out", args.out), ("shadows", int(args.shadows)),
             ("markers", int(args.markers))]
    if args.flow:
        if motion is None:
            raise _UsageError("--flow needs --markers")
        field = cfg.marker_field()
        flow = flow_image(field.positions_mm, motion.positions_mm, cfg.geometry,
                          scale=args.flow_scale)
        config_io.save_image_png(args.flow, flow)
        lines.append(("flow", args.flow))
    _emit(args, lines, f"wrote {args.out}")
    return 0


# ------------------------------------------------------------------ calibrate

def cmd_calibrate_optics(args):
    cfg = _load_cfg(args)
    manifest = config_io.load_calibration_manifest(args.manifest)
    if not manifest.background:
        raise ValidationError("manifest has no background image", field="manifest.background")
    background = config_io.load_image_png(manifest.resolve(manifest.background))
    images = [CalibrationImage(config_io.load_image_png(manifest.resolve(m.path)),
                               m.center_mm, m.depth_mm, m.ball_radius_mm)
              for m in manifest.images]
    dataset = build_rgb_normal_dataset(images, background, cfg.geometry,
                                       shadow_drop_threshold=args.shadow_drop)
    hyper = TrainingConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                           seed=args.seed)
    model, history = train_reflectance(dataset, hyper)
    resid = model_background_residual(model, background, cfg.geometry)
    config_io.save_model(args.model_out, model, manifest={
        "created_by": "tacsim calibrate optics",
        "seed": hyper.seed,
        "epochs": hyper.epochs,
        "dataset_size": dataset.size,
        "dataset_sha256": config_io.dataset_hash(dataset),
        "best_epoch": history["best_epoch"],
        "val_rmse_255": f"{history['val_rmse_255']:.6f}",
        "background_residual": f"{resid:.6f}",
    })
    if resid > 10.0:
        sys.stderr.write(f"warning: zero-gradient response is {resid:.1f} levels "
                         "from the background; calibration data may be off\n")
    _emit(args, [
        ("model", args.model_out), ("dataset_size", dataset.size),
        ("val_rmse_255", f"{history['val_rmse_255']:.6f}"),
        ("best_epoch", history["best_epoch"]),
        ("background_residual", f"{resid:.6f}"),
    ], f"trained on {dataset.size} samples, validation RMSE "
       f"{history['val_rmse_255']:.2f} levels, wrote {args.model_out}")
    return 0


def _rebase_paths(cfg, out_path):
    """Re-express config-relative paths against a new config location."""
    out_dir = os.path.dirname(os.path.abspath(out_path))
    updates = {}
    for attr in ("reflectance_model", "background_image"):
        rel = getattr(cfg, attr)
        if rel is not None:
            updates[attr] = os.path.relpath(cfg.resolve(rel), out_dir)
    return replace(cfg, base_dir=out_dir, **updates)


def cmd_calibrate_lights(args):
    cfg = _load_cfg(args)
    manifest = config_io.load_calibration_manifest(args.manifest)
    n_lights = len(cfg.rig.lights)
    observations = []
    for m in manifest.images:
        verts = list(m.vertices_mm) + [None] * (n_lights - len(m.vertices_mm))
        observations.append(BallObservation(m.center_mm, m.ball_radius_mm,
                                            tuple(verts[:n_lights])))
    rig, report = calibrate_lights(observations, cfg.rig)
    out_cfg = _rebase_paths(config_io.config_with_rig(cfg, rig), args.out)
    config_io.save_config(out_cfg, args.out)
    lines = [("out", args.out)]
    for e in report.entries:
        lines.append((f"light{e.index}_residual", f"{e.residual:.6f}"))
        lines.append((f"light{e.index}_units", e.units))
    _emit(args, lines, report.to_text() + f"wrote {args.out}")
    return 0


def cmd_calibrate_markers(args):
    cfg = _load_cfg(args)
    try:
        with open(args.observations) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"bad JSON in {args.observations}: {e}",
                              field="observations") from None
    base = os.path.dirname(os.path.abspath(args.observations))
    records = doc.get("observations")
    if not isinstance(records, list):
        raise ValidationError("expected an object with an 'observations' list",
                              field="observations")
    observations = []
    for i, rec in enumerate(records):
        try:
            kind = rec["kind"]
            hm = _load_heightmap(os.path.join(base, rec["heightmap"]))
            m_ini, disp = read_displacement_table(os.path.join(base, rec["table"]))
            contact = contact_state(hm, None, cfg.contact_threshold_mm)
            if rec.get("center_mm") is not None:
                contact.center = tuple(float(v) for v in rec["center_mm"])
            contact.shear_mm = tuple(float(v) for v in rec.get("shear_mm", (0.0, 0.0)))
            contact.twist_deg = float(rec.get("twist_deg", 0.0))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"bad record: {e}", field=f"observations[{i}]") from None
        observations.append(MotionObservation(kind, contact, m_ini, disp))
    coeffs, report = fit_lambdas(observations, init=cfg.motion, stride=args.stride)
    out_cfg = _rebase_paths(config_io.config_with_motion(cfg, coeffs), args.out)
    config_io.save_config(out_cfg, args.out)
    lines = [("out", args.out),
             ("lambda_d", repr(coeffs.lambda_d)),
             ("lambda_s", repr(coeffs.lambda_s)),
             ("lambda_t", repr(coeffs.lambda_t))]
    for kind in ("dilate", "shear", "twist"):
        lines.append((f"{kind}_rms_mm", f"{report.rms_mm[kind]:.6e}"))
    _emit(args, lines, report.to_text()
          + f"lambda_d {coeffs.lambda_d!r}  lambda_s {coeffs.lambda_s!r}  "
            f"lambda_t {coeffs.lambda_t!r}\nwrote {args.out}")
    return 0


# ------------------------------------------------------------------ compare

def cmd_compare(args):
    have_images = args.image_a is not None and args.image_b is not None
    have_tables = args.table_a is not None and args.table_b is not None
    if have_images == have_tables:
        raise _UsageError("pass either --image-a/--image-b or --table-a/--table-b")
    if have_images:
        a = config_io.load_image_png(args.image_a)
        b = config_io.load_image_png(args.image_b)
        report = image_metrics(a, b)
        _emit(args, [("l1", fmt_metric(report.l1)), ("mse", fmt_metric(report.mse)),
                     ("psnr", fmt_metric(report.psnr)), ("ssim", fmt_metric(report.ssim))],
              report.to_text())
        return 0
    pos_a, disp_a = read_displacement_table(args.table_a)
    pos_b, disp_b = read_displacement_table(args.table_b)
    if pos_a.shape != pos_b.shape or not np.allclose(pos_a, pos_b, atol=1e-9):
        raise ValidationError("tables describe different marker sets", field="tables")
    err = marker_l1(pos_a + disp_a, pos_b + disp_b)
    _emit(args, [("marker_l1_mm", f"{err:.9f}")], f"marker L1 {err:.6e} mm")
    return 0


# ------------------------------------------------------------------ bench

def cmd_bench(args):
    if args.iterations < MIN_BENCH_ITERATIONS:
        raise _UsageError(
            f"--iterations must be at least {MIN_BENCH_ITERATIONS}")
    cfg = _load_cfg(args)
    model = None
    if cfg.model_path and os.path.exists(cfg.model_path):
        model = config_io.load_model(cfg.model_path)
    background = None
    if cfg.background_path and os.path.exists(cfg.background_path):
        background = config_io.load_image_png(cfg.background_path)
    stages = list(BENCH_STAGES) if args.stage == "all" else [args.stage]
    blocks = []
    for stage in stages:
        report = bench_stage(stage, cfg, model=model, background=background,
                             iterations=args.iterations, warmup=args.warmup,
                             seed=args.seed, threads=args.threads)
        blocks.append(report.to_porcelain() if args.porcelain else report.to_text())
    sys.stdout.write("\n".join(blocks) if args.porcelain else "".join(blocks))
    return 0


# ------------------------------------------------------------------ wiring

def build_parser():
    parser = _Parser(prog="tacsim",
                     description="CPU simulator for vision-based tactile sensors")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("scene", help="render an indenter press into a height map")
    _common(p)
    p.add_argument("--shape", required=True,
                   choices=("sphere", "cylinder", "cuboid", "prism", "cone"))
    p.add_argument("--radius", type=float, help="sphere/cylinder/cone radius (mm)")
    p.add_argument("--width-mm", type=float, help="cuboid width (mm)")
    p.add_argument("--length-mm", type=float, help="cuboid length (mm)")
    p.add_argument("--side-mm", type=float, help="prism side (mm)")
    p.add_argument("--tip-height-mm", type=float, help="cone height (mm)")
    p.add_argument("--center", help="press center 'x,y' in mm (default: middle)")
    p.add_argument("--depth", type=float, required=True, help="press depth (mm)")
    p.add_argument("--twist", type=float, default=0.0, help="footprint twist (deg)")
    p.add_argument("--out", required=True, help="output raster (.tacr or 16-bit .png)")
    p.add_argument("--png-scale", type=float, default=0.001,
                   help="mm per level for PNG output")
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("render", help="render a tactile image from a height map")
    _common(p)
    p.add_argument("--heightmap", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="reflectance model override")
    p.add_argument("--background", help="background image override")
    p.add_argument("--shadows", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--markers", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--shear", help="tangential load 'dx,dy' in mm")
    p.add_argument("--twist", type=float, default=0.0, help="twist load (deg)")
    p.add_argument("--anchor", help="load anchor 'x,y' in mm (default: centroid)")
    p.add_argument("--stride", type=int, default=4, help="contact subsampling stride")
    p.add_argument("--flow", help="also write a marker flow image here")
    p.add_argument("--flow-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("calibrate", help="fit sensor models from captured data")
    csub = p.add_subparsers(dest="what", parser_class=_Parser)

    pc = csub.add_parser("optics", help="train the reflectance model from ball presses")
    _common(pc)
    pc.add_argument("--manifest", required=True, help="JSON manifest of annotated presses")
    pc.add_argument("--model-out", required=True)
    pc.add_argument("--epochs", type=int, default=80)
    pc.add_argument("--batch", type=int, default=256)
    pc.add_argument("--lr", type=float, default=3e-3)
    pc.add_argument("--shadow-drop", type=float, default=20.0,
                    help="luma drop that marks a pixel as shadowed")
    pc.set_defaults(func=cmd_calibrate_optics)

    pc = csub.add_parser("lights", help="recover light geometry from shadow vertices")
    _common(pc)
    pc.add_argument("--manifest", required=True)
    pc.add_argument("--out", required=True, help="updated config file")
    pc.set_defaults(func=cmd_calibrate_lights)

    pc = csub.add_parser("markers", help="fit marker motion coefficients")
    _common(pc)
    pc.add_argument("--observations", required=True, help="JSON observation list")
    pc.add_argument("--out", required=True, help="updated config file")
    pc.add_argument("--stride", type=int, default=1)
    pc.set_defaults(func=cmd_calibrate_markers)

    p = sub.add_parser("compare", help="compare images or marker tables")
    _common(p)
    p.add_argument("--image-a")
    p.add_argument("--image-b")
    p.add_argument("--table-a")
    p.add_argument("--table-b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="time the pipeline stages")
    _common(p)
    p.add_argument("--stage", default="all", choices=("all",) + BENCH_STAGES)
    p.add_argument("--iterations", type=int, default=60)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args) or 0
    except _UsageError as e:
        sys.stderr.write(f"usage error: {e}\n")
        return 1
    except ValidationError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except OSError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except NumericalError as e:
        sys.stderr.write(f"numerical error: {e}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
