"""Default boxes and the vertex / box regression codecs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import InvalidSpec, SchemaError

DEFAULT_STRIDES = (8, 16, 32, 64, 128, 256)
DEFAULT_RATIOS = (1.0, 2.0, 3.0, 1.0 / 2.0, 1.0 / 3.0)


@dataclass(frozen=True)
class GridSpec:
    input_width: int
    input_height: int
    layer_strides: tuple[int, ...] = DEFAULT_STRIDES
    aspect_ratios: tuple[float, ...] = DEFAULT_RATIOS
    scale_factor: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "layer_strides", tuple(int(s) for s in self.layer_strides))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))

    def validate(self) -> None:
        if self.input_width <= 0 or self.input_height <= 0:
            raise InvalidSpec("input dimensions must be positive")
        if not self.layer_strides or any(s <= 0 for s in self.layer_strides):
            raise InvalidSpec("strides must be positive")
        if list(self.layer_strides) != sorted(set(self.layer_strides)):
            raise InvalidSpec("strides must be strictly ascending")
        if not self.aspect_ratios or any(r <= 0 for r in self.aspect_ratios):
            raise InvalidSpec("aspect ratios must be positive")
        if self.scale_factor <= 0:
            raise InvalidSpec("scale_factor must be positive")
        if min(self.input_width, self.input_height) < max(self.layer_strides):
            raise InvalidSpec("input dimensions must be at least the largest stride")

    def grid_shape(self, stride: int) -> tuple[int, int]:
        """(rows, cols) of the cell grid for one layer."""
        return math.ceil(self.input_height / stride), math.ceil(self.input_width / stride)

    def box_count(self) -> int:
        return sum(r * c for r, c in map(self.grid_shape, self.layer_strides)) * len(self.aspect_ratios)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_strides"] = list(self.layer_strides)
        d["aspect_ratios"] = list(self.aspect_ratios)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SchemaError(f"bad grid_spec: {exc}") from exc
        spec.validate()
        return spec


class DefaultBox(NamedTuple):
    cx: float
    cy: float
    w: float
    h: float
    layer_index: int
    cell_row: int
    cell_col: int
    ratio_index: int

    def quad(self) -> np.ndarray:
        return box_quads(np.array([[self.cx, self.cy, self.w, self.h]]))[0]


@dataclass
class DefaultBoxes:
    """All default boxes of a grid, ordered by (layer, row, col, ratio)."""

    cxcywh: np.ndarray
    layer: np.ndarray
    row: np.ndarray
    col: np.ndarray
    ratio: np.ndarray
    spec: GridSpec | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.cxcywh)

    def __getitem__(self, i: int) -> DefaultBox:
        cx, cy, w, h = self.cxcywh[i]
        return DefaultBox(
            float(cx), float(cy), float(w), float(h),
            int(self.layer[i]), int(self.row[i]), int(self.col[i]), int(self.ratio[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def ltrb(self) -> np.ndarray:
        return cxcywh_to_ltrb(self.cxcywh)

    def quads(self) -> np.ndarray:
        return box_quads(self.cxcywh)

    @classmethod
    def from_cxcywh(cls, cxcywh) -> "DefaultBoxes":
        """Ad-hoc box set (no grid), handy for fixtures."""
        arr = np.asarray(cxcywh, dtype=float).reshape(-1, 4)
        zeros = np.zeros(len(arr), dtype=int)
        return cls(arr, zeros, zeros, zeros, zeros)


def generate_default_boxes(spec: GridSpec) -> DefaultBoxes:
    spec.validate()
    n_ratio = len(spec.aspect_ratios)
    sqrt_r = np.sqrt(np.asarray(spec.aspect_ratios))
    parts = []
    for k, s in enumerate(spec.layer_strides):
        rows, cols = spec.grid_shape(s)
        rr, cc, ri = np.meshgrid(np.arange(rows), np.arange(cols), np.arange(n_ratio), indexing="ij")
        rr, cc, ri = rr.ravel(), cc.ravel(), ri.ravel()
        side = spec.scale_factor * s
        boxes = np.column_stack([
            (cc + 0.5) * s,
            (rr + 0.5) * s,
            side * sqrt_r[ri],
            side / sqrt_r[ri],
        ])
        parts.append((boxes, np.full(len(rr), k), rr, cc, ri))
    return DefaultBoxes(
        np.concatenate([p[0] for p in parts]).astype(float),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        np.concatenate([p[3] for p in parts]),
        np.concatenate([p[4] for p in parts]),
        spec,
    )


def cxcywh_to_ltrb(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=float)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def box_quads(boxes) -> np.ndarray:
    """TL, TR, BR, BL corners of cxcywh boxes, shape ``(..., 4, 2)``."""
    l, t, r, b = np.moveaxis(cxcywh_to_ltrb(boxes), -1, 0)
    return np.stack([
        np.stack([l, t], -1), np.stack([r, t], -1),
        np.stack([r, b], -1), np.stack([l, b], -1),
    ], axis=-2)


def _boxes_array(box) -> np.ndarray:
    if isinstance(box, DefaultBox):
        return np.array([box.cx, box.cy, box.w, box.h])
    if isinstance(box, DefaultBoxes):
        return box.cxcywh
    return np.asarray(box, dtype=float)


def encode_vertices(target, box, normalize: bool = True) -> np.ndarray:
    """Offsets from default-box corners to target template vertices.

    ``target`` is ``(..., 4, 2)``, ``box`` cxcywh ``(..., 4)``; returns ``(..., 8)``
    laid out as ``dx1, dy1, ..., dx4, dy4``.
    """
    b = _boxes_array(box)
    dp = np.asarray(target, dtype=float) - box_quads(b)
    if normalize:
        dp = dp / b[..., None, 2:4]
    return dp.reshape(dp.shape[:-2] + (8,))


def decode_vertices(dp, box, normalize: bool = True) -> np.ndarray:
    b = _boxes_array(box)
    d = np.asarray(dp, dtype=float)
    d = d.reshape(d.shape[:-1] + (4, 2))
    if normalize:
        d = d * b[..., None, 2:4]
    return box_quads(b) + d


def encode_box(target, box, normalize: bool = True) -> np.ndarray:
    """(dl, dt, dr, db) between an ltrb target and a default box."""
    b = _boxes_array(box)
    d = np.asarray(target, dtype=float) - cxcywh_to_ltrb(b)
    if normalize:
        d = d / np.concatenate([b[..., 2:4], b[..., 2:4]], axis=-1)
    return d


def decode_box(delta, box, normalize: bool = True) -> np.ndarray:
    b = _boxes_array(box)
    d = np.asarray(delta, dtype=float)
    if normalize:
        d = d * np.concatenate([b[..., 2:4], b[..., 2:4]], axis=-1)
    return cxcywh_to_ltrb(b) + d
