import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signpose.anchors import (
    GridSpec, decode_box, decode_vertices, encode_box, encode_vertices, generate_default_boxes,
)
from signpose.errors import InvalidSpec, SchemaError


def test_single_cell():
    boxes = generate_default_boxes(GridSpec(256, 256, (256,), (1.0,)))
    assert len(boxes) == 1
    np.testing.assert_array_equal(boxes.cxcywh[0], [128, 128, 1024, 1024])


def test_ceil_grid_and_count():
    spec = GridSpec(800, 450)
    assert spec.grid_shape(8) == (57, 100)
    expected = sum(5 * math.ceil(800 / s) * math.ceil(450 / s) for s in (8, 16, 32, 64, 128, 256))
    assert spec.box_count() == expected == len(generate_default_boxes(spec))


def test_ordering_and_ratio_sizes():
    spec = GridSpec(64, 64, (16, 32), (1.0, 4.0))
    b = generate_default_boxes(spec)
    assert list(b.layer[:4]) == [0, 0, 0, 0]
    assert (b.row[0], b.col[0], b.ratio[0]) == (0, 0, 0)
    assert (b.row[1], b.col[1], b.ratio[1]) == (0, 0, 1)
    assert (b.row[2], b.col[2]) == (0, 1)
    np.testing.assert_allclose(b.cxcywh[1], [8, 8, 128, 32])
    # layer/row/col/ratio is lexicographically non-decreasing
    keys = list(zip(b.layer, b.row, b.col, b.ratio))
    assert keys == sorted(keys)


def test_deterministic_and_canon():
    spec = GridSpec(320, 256)
    a, b = generate_default_boxes(spec), generate_default_boxes(spec)
    np.testing.assert_array_equal(a.cxcywh, b.cxcywh)
    q = a.quads()
    assert np.all(q[:, 0, 0] < q[:, 1, 0]) and np.all(q[:, 0, 1] == q[:, 1, 1])
    assert np.all(q[:, 2, 1] > q[:, 1, 1]) and np.all(q[:, 3, 0] == q[:, 0, 0])


def test_invalid_specs():
    for kw in ({"layer_strides": (16, 8)}, {"aspect_ratios": (0.0,)}, {"scale_factor": -1.0},
               {"layer_strides": (512,)}):
        with pytest.raises(InvalidSpec):
            generate_default_boxes(GridSpec(256, 256, **kw))
    with pytest.raises(SchemaError):
        GridSpec.from_dict({"input_width": 10})
    assert GridSpec.from_dict(GridSpec(640, 360).to_dict()) == GridSpec(640, 360)


def test_codec_examples():
    box = np.array([50.0, 50.0, 100.0, 100.0])
    corners = np.array([[0, 0], [100, 0], [100, 100], [0, 100]], float)
    np.testing.assert_array_equal(encode_vertices(corners, box), np.zeros(8))
    np.testing.assert_allclose(encode_vertices(corners + [10, 0], box), [0.1, 0] * 4, atol=1e-15)
    np.testing.assert_allclose(encode_vertices(corners + [10, 0], box, normalize=False), [10, 0] * 4)
    np.testing.assert_allclose(decode_vertices(np.zeros(8), box), corners)
    np.testing.assert_allclose(decode_vertices([0.1, 0] * 4, box), corners + [10, 0], atol=1e-12)
    np.testing.assert_array_equal(encode_box([0, 0, 100, 100], box), np.zeros(4))
    np.testing.assert_allclose(encode_box([10, 0, 110, 100], box), [0.1, 0, 0.1, 0], atol=1e-15)
    np.testing.assert_allclose(decode_box([0.1, 0, 0.1, 0], box), [10, 0, 110, 100], atol=1e-12)


coord = st.floats(-2000, 2000, allow_nan=False)
size = st.floats(1.0, 1000.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(coord, min_size=8, max_size=8), coord, coord, size, size, st.booleans())
def test_codec_roundtrip_property(q, cx, cy, w, h, normalize):
    quad = np.array(q).reshape(4, 2)
    box = np.array([cx, cy, w, h])
    back = decode_vertices(encode_vertices(quad, box, normalize), box, normalize)
    np.testing.assert_allclose(back, quad, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(quad).max()))
    ltrb = np.array([q[0], q[1], q[0] + abs(q[2]), q[1] + abs(q[3])])
    np.testing.assert_allclose(decode_box(encode_box(ltrb, box, normalize), box, normalize), ltrb,
                               rtol=1e-12, atol=1e-12 * max(1.0, np.abs(ltrb).max()))
