"""``signpose`` command line.

Exit status: 0 success, 1 usage error, 2 data error. Failures are reported as
one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .. import __version__
from ..anchors import GridSpec, generate_default_boxes
from ..augment import AugmentConfig, make_rng, prune_unusable, sample_perspective_augment
from ..detector import crop_resize_merge, detect
from ..errors import NoLargeSign, SchemaError, SignPoseError
from ..evalkit import EvalConfig, evaluate, map_vs_iou_sweep, sweep_to_csv
from ..mapsim import SimScene, rows_to_csv, run_experiment
from ..refine import RefineConfig, read_pgm, refine_boundary
from ..templates import DEFAULT_TEMPLATES, TemplateSet
from . import io as fio
from .synth import OracleConfig, generate_synthetic_dataset, oracle_predict, oracle_predict_crop_resize

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
CONFIG_SECTIONS = ("grid_spec", "oracle", "augment", "eval", "refine", "mapsim", "detect", "templates")

log = logging.getLogger("signpose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration ------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    cfg = fio.read_json(path)
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise SchemaError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _build(cls, section: dict | None, **override):
    d = dict(section or {})
    d.update({k: v for k, v in override.items() if v is not None})
    names = {f.name for f in fields(cls)}
    bad = set(d) - names
    if bad:
        raise SchemaError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad {cls.__name__}: {exc}") from exc


def templates_from(cfg: dict) -> TemplateSet:
    return TemplateSet.from_dict(cfg["templates"]) if "templates" in cfg else DEFAULT_TEMPLATES


def grid_spec_for(cfg: dict, width, height) -> GridSpec:
    d = {k: v for k, v in cfg.get("grid_spec", {}).items() if k not in ("input_width", "input_height")}
    return GridSpec.from_dict({"input_width": int(width), "input_height": int(height), **d})


def detect_options(cfg: dict, args) -> dict:
    d = {"score_threshold": 0.5, "nms_threshold": 0.45}
    d.update(cfg.get("detect", {}))
    for k in ("score_threshold", "nms_threshold"):
        if getattr(args, k, None) is not None:
            d[k] = getattr(args, k)
    unknown = set(d) - {"score_threshold", "nms_threshold"}
    if unknown:
        raise SchemaError(f"unknown detect keys: {sorted(unknown)}")
    return d


# -- output -------------------------------------------------------------------

def emit(args, text: str) -> None:
    if args.out:
        fio.write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _common_shape(images) -> tuple[int, int]:
    dims = {(float(img.width), float(img.height)) for img in images}
    if len(dims) > 1:
        raise SchemaError("all images of a dataset must share one size for a single grid")
    if not dims:
        raise SchemaError("dataset has no images")
    w, h = dims.pop()
    if w != int(w) or h != int(h):
        raise SchemaError("image dimensions must be integers")
    return int(w), int(h)


# -- subcommands --------------------------------------------------------------

def cmd_templates_dump(args, cfg):
    emit(args, templates_from(cfg).dumps() + "\n")


def cmd_anchors_gen(args, cfg):
    w = args.width or cfg.get("grid_spec", {}).get("input_width", 1280)
    h = args.height or cfg.get("grid_spec", {}).get("input_height", 720)
    spec = grid_spec_for(cfg, w, h)
    boxes = generate_default_boxes(spec)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["index", "layer", "stride", "row", "col", "ratio", "cx", "cy", "w", "h"])
    for i in range(len(boxes)):
        cx, cy, bw, bh = boxes.cxcywh[i]
        k = int(boxes.layer[i])
        out.writerow([i, k, spec.layer_strides[k], int(boxes.row[i]), int(boxes.col[i]),
                      spec.aspect_ratios[int(boxes.ratio[i])], repr(cx), repr(cy), repr(bw), repr(bh)])
    emit(args, buf.getvalue())


def cmd_synth(args, cfg):
    ocfg = _build(OracleConfig, cfg.get("oracle"), rng_seed=args.seed, scene_count=args.scenes)
    data = generate_synthetic_dataset(ocfg, templates_from(cfg))
    emit(args, fio.dumps(fio.dataset_to_dict(data)))


def cmd_predict_oracle(args, cfg):
    templates = templates_from(cfg)
    data = fio.load_dataset(args.gt, templates)
    ocfg = _build(OracleConfig, cfg.get("oracle"), rng_seed=args.seed, sigma_pred=args.sigma)
    w, h = _common_shape(data)
    kw = dict(sigma_pred=ocfg.sigma_pred, logit_margin=ocfg.logit_margin, seed=ocfg.rng_seed,
              templates=templates, match_iou=ocfg.match_iou)
    if args.crop_resize:
        if w % 2 or h % 2:
            raise SchemaError("crop-and-resize needs even image dimensions")
        spec = grid_spec_for(cfg, w // 2, h // 2)
        records = oracle_predict_crop_resize(data, spec, **kw)
    else:
        spec = grid_spec_for(cfg, w, h)
        records = oracle_predict(data, spec, **kw)
    mode = "sidecar" if args.sidecar else ("sparse" if args.sparse else "dense")
    sidecar = None
    if mode == "sidecar":
        if not args.out:
            raise UsageError("--sidecar needs --out")
        sidecar = Path(args.out).with_suffix(".f32")
    emit(args, fio.dumps(fio.predictions_to_dict(records, spec, templates, mode=mode, sidecar_path=sidecar)))


def run_detection(pred_path, cfg, opts, crop_resize: bool | None = None) -> list[dict]:
    """Decode a prediction file into per-image detection records."""
    templates = templates_from(cfg)
    spec, normalize, records = fio.predictions_from_dict(fio.read_json(pred_path), Path(pred_path).parent)
    boxes = generate_default_boxes(spec)
    grouped: dict[str, dict] = {}
    order = []
    for rec in records:
        if rec["id"] not in grouped:
            grouped[rec["id"]] = {"width": rec["width"], "height": rec["height"], "branches": {}}
            order.append(rec["id"])
        dets = detect(rec["grid"], boxes, opts["score_threshold"], opts["nms_threshold"], templates, normalize)
        grouped[rec["id"]]["branches"][rec["branch"]] = dets
    out = []
    for image_id in order:
        g = grouped[image_id]
        br = g["branches"]
        paired = "crop" in br and "half" in br
        if crop_resize and not paired:
            raise SchemaError(f"image {image_id!r} lacks crop/half branches")
        if paired:
            w, h = g["width"], g["height"]
            if w is None or h is None:
                raise SchemaError("crop-and-resize records need image width and height")
            dets = crop_resize_merge(br["crop"], br["half"], int(w), int(h), opts["nms_threshold"])
        elif "full" in br:
            dets = br["full"]
        else:
            raise SchemaError(f"image {image_id!r} has unpaired branches {sorted(br)}")
        out.append({"id": image_id, "width": g["width"], "height": g["height"], "detections": dets})
    return out


def cmd_detect(args, cfg):
    per_image = run_detection(args.pred, cfg, detect_options(cfg, args), args.crop_resize)
    emit(args, fio.dumps(fio.detections_to_dict(per_image)))


def cmd_refine(args, cfg):
    rcfg = _build(RefineConfig, cfg.get("refine"))
    patch = read_pgm(args.patch)
    doc = fio.read_json(args.boundary)
    pts = doc.get("boundary") if isinstance(doc, dict) else doc
    try:
        boundary = np.asarray(pts, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad boundary: {exc}") from exc
    if boundary.ndim != 2 or boundary.shape[1] != 2 or len(boundary) < 3:
        raise SchemaError("boundary must be a list of at least three [x, y] points")
    res = refine_boundary(patch, boundary, rcfg)
    emit(args, fio.dumps({
        "boundary": np.asarray(res.boundary).tolist(),
        "accepted": res.accepted,
        "energy_before": res.energy_before,
        "energy_after": res.energy_after,
        "iterations": res.iterations,
    }))


def _load_detections(path, cfg, args) -> list[dict]:
    doc = fio.read_json(path)
    if isinstance(doc, dict) and doc.get("format") == fio.PREDICTIONS_FORMAT:
        return run_detection(path, cfg, detect_options(cfg, args))
    return fio.detections_from_dict(doc)


def cmd_eval(args, cfg):
    ecfg = _build(EvalConfig, cfg.get("eval"))
    templates = templates_from(cfg)
    gts = {img.image_id: img for img in fio.load_dataset(args.gt, templates)}
    dets = {r["id"]: r["detections"] for r in _load_detections(args.pred, cfg, args)}
    extra = set(dets) - set(gts)
    if extra:
        raise SchemaError(f"detections for unknown images: {sorted(extra)[:5]}")
    images = [(dets.get(i, []), img.signs, img.width) for i, img in gts.items()]
    if args.sweep is not None:
        csv_text = sweep_to_csv(map_vs_iou_sweep(images, ecfg))
        if args.sweep:
            fio.write_text(args.sweep, csv_text)
        else:
            emit(args, csv_text)
            return
    report = evaluate(images, ecfg)
    if not args.pairs:
        report.pop("matched_pairs")
    emit(args, fio.dumps(report))


def cmd_augment(args, cfg):
    acfg = _build(AugmentConfig, cfg.get("augment"), rng_seed=args.seed)
    data = fio.load_dataset(args.gt, templates_from(cfg))
    out, skipped = [], []
    for idx, img in enumerate(data):
        verdict = prune_unusable(img, acfg.border_margin)
        if not verdict.usable:
            skipped.append({"id": img.image_id, "reason": verdict.reason})
            continue
        try:
            samples = sample_perspective_augment(img, acfg, make_rng(acfg.rng_seed, idx))
        except NoLargeSign:
            skipped.append({"id": img.image_id, "reason": "no_large_sign"})
            continue
        for k, s in enumerate(samples):
            d = fio.image_to_dict(
                s.image,
                source_id=img.image_id,
                homography=s.homography.tolist(),
                sampled_corners=s.sampled_corners.tolist(),
            )
            d["id"] = f"{img.image_id}#aug{k}"
            out.append(d)
    emit(args, fio.dumps({"images": out, "skipped": skipped,
                          "rng": {"algorithm": acfg.rng_algorithm, "seed": acfg.rng_seed}}))


def cmd_mapsim(args, cfg):
    section = dict(cfg.get("mapsim", {}))
    seed = args.seed if args.seed is not None else section.pop("seed", 0)
    section.pop("seed", None)
    scene = _build(SimScene, section, trials=args.trials, bbox_noise=args.bbox_noise)
    emit(args, rows_to_csv(run_experiment(scene, seed)))


# -- parser -------------------------------------------------------------------

def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=_u64, help="RNG seed (unsigned 64-bit)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="signpose", description="Template-vertex sign detection toolkit.")
    p.add_argument("--version", action="version", version=f"signpose {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("templates", help="shape templates")
    tsub = t.add_subparsers(dest="action", required=True, parser_class=_Parser)
    tsub.add_parser("dump", parents=[common], help="print the template set as JSON").set_defaults(
        func=cmd_templates_dump)

    a = sub.add_parser("anchors", help="default boxes")
    asub = a.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = asub.add_parser("gen", parents=[common], help="write the default boxes as CSV")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.set_defaults(func=cmd_anchors_gen)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--scenes", type=int)
    s.set_defaults(func=cmd_synth)

    o = sub.add_parser("predict-oracle", parents=[common], help="oracle prediction grids from ground truth")
    o.add_argument("--gt", required=True)
    o.add_argument("--sigma", type=float, help="vertex noise in px")
    o.add_argument("--crop-resize", action="store_true", help="emit crop and half-resolution branches")
    fmt = o.add_mutually_exclusive_group()
    fmt.add_argument("--sparse", action="store_true", help="store only non-default records")
    fmt.add_argument("--sidecar", action="store_true", help="store records in a float32 sidecar")
    o.set_defaults(func=cmd_predict_oracle)

    d = sub.add_parser("detect", parents=[common], help="decode, NMS and boundary projection")
    d.add_argument("--pred", required=True)
    d.add_argument("--crop-resize", action="store_true", help="require and merge crop/half branches")
    d.add_argument("--score-threshold", type=float)
    d.add_argument("--nms-threshold", type=float)
    d.set_defaults(func=cmd_detect)

    r = sub.add_parser("refine", parents=[common], help="refine a boundary against a PGM patch")
    r.add_argument("--patch", required=True)
    r.add_argument("--boundary", required=True)
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", parents=[common], help="AP/mAP/AVE report")
    e.add_argument("--pred", required=True, help="detections (or prediction grid) JSON")
    e.add_argument("--gt", required=True)
    e.add_argument("--sweep", nargs="?", const="", help="mAP vs IoU CSV (to PATH, or as the main output)")
    e.add_argument("--pairs", action="store_true", help="include matched pairs in the report")
    e.add_argument("--score-threshold", type=float)
    e.add_argument("--nms-threshold", type=float)
    e.set_defaults(func=cmd_eval)

    au = sub.add_parser("augment", parents=[common], help="perspective augmentation of annotations")
    au.add_argument("--gt", required=True)
    au.set_defaults(func=cmd_augment)

    m = sub.add_parser("mapsim", parents=[common], help="two-view mapping simulation CSV")
    m.add_argument("--trials", type=int)
    m.add_argument("--bbox-noise", choices=("after_snap", "before_snap"))
    m.set_defaults(func=cmd_mapsim)
    return p


def _fail(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (SignPoseError, OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
