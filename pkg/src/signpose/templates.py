"""Sign shape templates and conversion between boundary corners and template vertices.

A template lives in the unit square. Its four *template vertices* are the
square's corners ``(0,0), (1,0), (1,1), (0,1)`` (TL, TR, BR, BL); its
*boundary corners* are the actual polygon corners of the sign. A detected
quad fixes the homography from the unit square into the image, which carries
the boundary corners along with it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .errors import NoTemplate, SchemaError
from .geometry import (
    affine_from_correspondences,
    as_points,
    bounding_box,
    homography_from_correspondences,
    project,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

# cut length of the regular octagon inscribed in the unit square
OCTAGON_CUT = 1.0 / (2.0 + np.sqrt(2.0))


class ShapeClass(str, Enum):
    BACKGROUND = "background"
    RECTANGLE = "rectangle"
    DIAMOND = "diamond"
    OCTAGON = "octagon"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ShapeTemplate:
    shape: str
    boundary_corners: np.ndarray

    @property
    def corner_count(self) -> int:
        return len(self.boundary_corners)

    def to_dict(self) -> dict:
        return {"shape": str(self.shape), "corners": self.boundary_corners.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ShapeTemplate":
        try:
            shape = str(d["shape"])
            corners = as_points(d["corners"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad template record: {exc}") from exc
        tpl = cls(shape, corners)
        validate_template(tpl)
        return tpl


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def validate_template(tpl: ShapeTemplate) -> None:
    """Check corners lie in the unit square and form a convex polygon that
    starts nearest the origin and winds clockwise (image coordinates)."""
    c = tpl.boundary_corners
    if tpl.shape == ShapeClass.BACKGROUND:
        raise SchemaError("background carries no template")
    if len(c) < 3:
        raise SchemaError(f"{tpl.shape}: a template needs at least 3 corners")
    if np.any(c < -1e-12) or np.any(c > 1 + 1e-12):
        raise SchemaError(f"{tpl.shape}: corners must lie in the unit square")
    d = np.linalg.norm(c, axis=1)
    if d[0] > d.min() + 1e-12:
        raise SchemaError(f"{tpl.shape}: first corner must be nearest (0, 0)")
    # y points down, so a positive shoelace sum is clockwise on screen
    if _signed_area(c) <= 0:
        raise SchemaError(f"{tpl.shape}: corners must wind clockwise")
    e1 = np.roll(c, -1, axis=0) - c
    e2 = np.roll(e1, -1, axis=0)
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(cross < -1e-12):
        raise SchemaError(f"{tpl.shape}: polygon is not convex")


def _builtin_corners(shape: ShapeClass) -> np.ndarray:
    if shape == ShapeClass.RECTANGLE:
        return UNIT_SQUARE.copy()
    if shape == ShapeClass.DIAMOND:
        return np.array([[0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5]])
    if shape == ShapeClass.OCTAGON:
        a = OCTAGON_CUT
        return np.array(
            [[a, 0], [1 - a, 0], [1, a], [1, 1 - a], [1 - a, 1], [a, 1], [0, 1 - a], [0, a]],
            dtype=float,
        )
    raise NoTemplate(f"no template for {shape}")


def builtin_template(shape) -> ShapeTemplate:
    try:
        shape = ShapeClass(shape)
    except ValueError as exc:
        raise NoTemplate(f"no builtin template for {shape!r}") from exc
    return ShapeTemplate(shape.value, _builtin_corners(shape))


class TemplateSet:
    """Ordered shape templates; class index 0 is always background."""

    def __init__(self, templates: Iterable[ShapeTemplate]):
        self._templates: dict[str, ShapeTemplate] = {}
        for tpl in templates:
            validate_template(tpl)
            if tpl.shape in self._templates:
                raise SchemaError(f"duplicate template {tpl.shape!r}")
            self._templates[str(tpl.shape)] = tpl

    @property
    def class_names(self) -> list[str]:
        return [ShapeClass.BACKGROUND.value] + list(self._templates)

    @property
    def shapes(self) -> list[str]:
        return list(self._templates)

    def class_index(self, shape) -> int:
        return self.class_names.index(str(shape))

    def __getitem__(self, shape) -> ShapeTemplate:
        try:
            return self._templates[str(shape)]
        except KeyError:
            raise NoTemplate(f"no template for {shape!r}") from None

    def __contains__(self, shape) -> bool:
        return str(shape) in self._templates

    def __len__(self) -> int:
        return len(self._templates)

    def to_dict(self) -> dict:
        return {"templates": [t.to_dict() for t in self._templates.values()]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TemplateSet":
        if "templates" not in d:
            raise SchemaError("template set needs a 'templates' list")
        return cls(ShapeTemplate.from_dict(t) for t in d["templates"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


DEFAULT_TEMPLATES = TemplateSet(
    builtin_template(s) for s in (ShapeClass.RECTANGLE, ShapeClass.DIAMOND, ShapeClass.OCTAGON)
)


def _template_to_image(corners: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    if len(corners) == 3:
        return affine_from_correspondences(corners, boundary)
    return homography_from_correspondences(corners, boundary)


def boundary_to_template_vertices(boundary, shape, templates: TemplateSet = DEFAULT_TEMPLATES) -> np.ndarray:
    """Image-space template vertices (TL, TR, BR, BL) of an annotated boundary."""
    tpl = templates[shape]
    boundary = as_points(boundary)
    if len(boundary) != tpl.corner_count:
        raise ValueError(
            f"{shape} boundary needs {tpl.corner_count} corners, got {len(boundary)}"
        )
    H = _template_to_image(tpl.boundary_corners, boundary)
    return project(H, UNIT_SQUARE)


def template_vertices_to_boundary(quad, shape, templates: TemplateSet = DEFAULT_TEMPLATES) -> np.ndarray:
    """Project the template's boundary corners through the quad's homography."""
    tpl = templates[shape]
    H = homography_from_correspondences(UNIT_SQUARE, as_points(quad))
    return project(H, tpl.boundary_corners)


@dataclass
class GroundTruthSign:
    shape: str
    boundary: np.ndarray
    template_vertices: np.ndarray
    difficult: bool = False

    @classmethod
    def from_boundary(cls, shape, boundary, difficult: bool = False,
                      templates: TemplateSet = DEFAULT_TEMPLATES) -> "GroundTruthSign":
        boundary = as_points(boundary)
        quad = boundary_to_template_vertices(boundary, shape, templates)
        return cls(str(shape), boundary, quad, difficult)

    @classmethod
    def from_quad(cls, shape, quad, difficult: bool = False,
                  templates: TemplateSet = DEFAULT_TEMPLATES) -> "GroundTruthSign":
        quad = as_points(quad)
        boundary = template_vertices_to_boundary(quad, shape, templates)
        return cls(str(shape), boundary, quad, difficult)

    @property
    def bbox(self):
        """Target box used for matching: circumscribed rectangle of the template vertices."""
        return bounding_box(self.template_vertices)
