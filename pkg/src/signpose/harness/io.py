"""JSON file formats: datasets, prediction grids (with optional float32 sidecar),
detections, and the harness configuration."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from ..anchors import GridSpec
from ..augment import AnnotatedImage
from ..detector import Detection, PredictionGrid
from ..errors import MisalignedGrid, SchemaError
from ..templates import DEFAULT_TEMPLATES, GroundTruthSign, ShapeClass, TemplateSet

PREDICTIONS_FORMAT = "signpose.predictions.v1"
DETECTIONS_FORMAT = "signpose.detections.v1"


def read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


# -- datasets -----------------------------------------------------------------

def sign_to_dict(sign: GroundTruthSign) -> dict:
    return {
        "shape": sign.shape,
        "boundary": np.asarray(sign.boundary).tolist(),
        "template_vertices": np.asarray(sign.template_vertices).tolist(),
        "difficult": bool(sign.difficult),
    }


def sign_from_dict(d: dict, templates: TemplateSet = DEFAULT_TEMPLATES) -> GroundTruthSign:
    try:
        shape = str(d["shape"])
        boundary = np.asarray(d["boundary"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad sign record: {exc}") from exc
    if shape == ShapeClass.BACKGROUND or shape not in templates:
        raise SchemaError(f"unknown sign shape {shape!r}")
    if boundary.ndim != 2 or boundary.shape != (templates[shape].corner_count, 2):
        raise SchemaError(f"{shape} boundary must have {templates[shape].corner_count} [x, y] corners")
    if not np.all(np.isfinite(boundary)):
        raise SchemaError("sign geometry must be finite")
    difficult = bool(d.get("difficult", False))
    if d.get("template_vertices") is None:
        return GroundTruthSign.from_boundary(shape, boundary, difficult, templates)
    quad = np.asarray(d["template_vertices"], dtype=float)
    if quad.shape != (4, 2) or not np.all(np.isfinite(quad)):
        raise SchemaError("template_vertices must be four finite [x, y] points")
    return GroundTruthSign(shape, boundary, quad, difficult)


def image_to_dict(img: AnnotatedImage, **extra) -> dict:
    d = {"id": img.image_id, "width": img.width, "height": img.height}
    if img.payload is not None:
        d["payload"] = img.payload
    d.update(extra)
    d["signs"] = [sign_to_dict(s) for s in img.signs]
    return d


def image_from_dict(d: dict, templates: TemplateSet = DEFAULT_TEMPLATES) -> AnnotatedImage:
    try:
        return AnnotatedImage(
            float(d["width"]), float(d["height"]),
            [sign_from_dict(s, templates) for s in d.get("signs", [])],
            str(d.get("id", "")), d.get("payload"),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad image record: {exc}") from exc


def dataset_to_dict(images: list[AnnotatedImage]) -> dict:
    return {"images": [image_to_dict(img) for img in images]}


def dataset_from_dict(doc: dict, templates: TemplateSet = DEFAULT_TEMPLATES) -> list[AnnotatedImage]:
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise SchemaError("dataset must be an object with an 'images' list")
    return [image_from_dict(d, templates) for d in doc["images"]]


def load_dataset(path, templates: TemplateSet = DEFAULT_TEMPLATES) -> list[AnnotatedImage]:
    return dataset_from_dict(read_json(path), templates)


# -- prediction grids ---------------------------------------------------------

def _most_common_row(rows: np.ndarray) -> np.ndarray:
    # lexsort + run lengths; np.unique(axis=0) sorts a void view and is far slower
    s = rows[np.lexsort(rows.T[::-1])]
    starts = np.flatnonzero(np.concatenate([[True], np.any(s[1:] != s[:-1], axis=1)]))
    lengths = np.diff(np.append(starts, len(s)))
    return s[starts[lengths.argmax()]]


def predictions_to_dict(records: list[dict], spec: GridSpec, templates: TemplateSet = DEFAULT_TEMPLATES,
                        normalize: bool = True, mode: str = "dense",
                        sidecar_path: str | Path | None = None) -> dict:
    """Serialize prediction grids.

    ``records`` holds ``{"id", "width", "height", "branch", "grid"}`` dicts.
    ``mode`` is ``dense`` (every box as ``{"logits", "dp"}``), ``sparse``
    (one shared default record plus the boxes that differ from it) or
    ``sidecar`` (raw little-endian float32 rows of logits followed by dp).
    """
    doc = {
        "format": PREDICTIONS_FORMAT,
        "grid_spec": spec.to_dict(),
        "class_count": len(templates.class_names),
        "classes": templates.class_names,
        "normalize": normalize,
        "images": [],
    }
    blobs, offset = [], 0
    for rec in records:
        grid: PredictionGrid = rec["grid"]
        entry = {k: rec[k] for k in ("id", "width", "height", "branch") if k in rec}
        if mode == "dense":
            entry["boxes"] = [{"logits": lg.tolist(), "dp": dp.tolist()} for lg, dp in zip(grid.logits, grid.dp)]
        elif mode == "sparse":
            rows = np.hstack([grid.logits, grid.dp])
            default = _most_common_row(rows)
            differs = np.flatnonzero(np.any(rows != default, axis=1))
            n = grid.logits.shape[1]
            entry["default"] = {"logits": default[:n].tolist(), "dp": default[n:].tolist()}
            entry["records"] = [
                {"index": int(i), "logits": grid.logits[i].tolist(), "dp": grid.dp[i].tolist()} for i in differs
            ]
        elif mode == "sidecar":
            entry["offset"] = offset
            blobs.append(np.hstack([grid.logits, grid.dp]).astype("<f4"))
            offset += len(grid)
        else:
            raise ValueError(f"unknown prediction mode {mode!r}")
        doc["images"].append(entry)
    if mode == "sidecar":
        if sidecar_path is None:
            raise ValueError("sidecar mode needs a sidecar path")
        Path(sidecar_path).write_bytes(b"".join(b.tobytes() for b in blobs))
        doc["sidecar"] = Path(sidecar_path).name
    return doc


def predictions_from_dict(doc: dict, base_dir: Path | None = None):
    """Inverse of :func:`predictions_to_dict`; returns (spec, normalize, records)."""
    if not isinstance(doc, dict) or doc.get("format") != PREDICTIONS_FORMAT:
        raise SchemaError(f"prediction file must declare format {PREDICTIONS_FORMAT!r}")
    try:
        spec = GridSpec.from_dict(doc["grid_spec"])
        n_cls = int(doc["class_count"])
        images = doc["images"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad prediction header: {exc}") from exc
    n_boxes = spec.box_count()
    sidecar = None
    if "sidecar" in doc:
        path = Path(base_dir or ".") / doc["sidecar"]
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        if raw.size % (n_cls + 8):
            raise SchemaError("sidecar size is not a whole number of records")
        sidecar = raw.reshape(-1, n_cls + 8).astype(float)
    records = []
    for entry in images:
        try:
            if sidecar is not None:
                off = int(entry["offset"])
                rows = sidecar[off:off + n_boxes]
                if len(rows) != n_boxes:
                    raise MisalignedGrid("sidecar holds fewer records than the grid defines")
            elif "boxes" in entry:
                rows = np.array([list(b["logits"]) + list(b["dp"]) for b in entry["boxes"]], dtype=float)
            else:
                default = list(entry["default"]["logits"]) + list(entry["default"]["dp"])
                rows = np.tile(np.asarray(default, dtype=float), (n_boxes, 1))
                for r in entry.get("records", []):
                    rows[int(r["index"])] = list(r["logits"]) + list(r["dp"])
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SchemaError(f"bad prediction record: {exc}") from exc
        if rows.ndim != 2 or rows.shape != (n_boxes, n_cls + 8):
            raise MisalignedGrid(f"expected {n_boxes} records of {n_cls + 8} values, got {rows.shape}")
        records.append({
            "id": str(entry.get("id", "")),
            "width": entry.get("width"),
            "height": entry.get("height"),
            "branch": entry.get("branch", "full"),
            "grid": PredictionGrid(rows[:, :n_cls], rows[:, n_cls:]),
        })
    return spec, bool(doc.get("normalize", True)), records


# -- detections ---------------------------------------------------------------

def detections_to_dict(per_image: list[dict]) -> dict:
    """``per_image`` holds ``{"id", "width", "height", "detections"}`` dicts."""
    return {
        "format": DETECTIONS_FORMAT,
        "images": [
            {"id": r["id"], "width": r["width"], "height": r["height"],
             "detections": [d.to_dict() for d in r["detections"]]}
            for r in per_image
        ],
    }


def detections_from_dict(doc: dict) -> list[dict]:
    if not isinstance(doc, dict) or doc.get("format") != DETECTIONS_FORMAT:
        raise SchemaError(f"detection file must declare format {DETECTIONS_FORMAT!r}")
    try:
        return [
            {"id": str(r["id"]), "width": r.get("width"), "height": r.get("height"),
             "detections": [Detection.from_dict(d) for d in r["detections"]]}
            for r in doc["images"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad detection record: {exc}") from exc
