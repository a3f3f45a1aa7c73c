import numpy as np
import pytest

from signpose.errors import OutOfPatch
from signpose.refine import (
    RefineConfig, bilinear, gradient_magnitude, rasterize_polygon, read_pgm, refine_boundary, write_pgm,
)
from signpose.templates import builtin_template

OCT = builtin_template("octagon").boundary_corners


def _scene(size=120, side=60.0, offset=(30.0, 30.0)):
    truth = OCT * side + np.asarray(offset)
    patch = rasterize_polygon(size, size, truth, foreground=0.9, background=0.1)
    return patch, truth


def test_gradient_examples():
    assert not gradient_magnitude(np.full((10, 10), 3.0)).any()
    step = np.zeros((10, 12))
    step[:, 6:] = 1.0
    g = gradient_magnitude(step)
    assert set(np.argmax(g, axis=1)) <= {5, 6}
    assert g[:, :4].max() == 0 and g[:, 9:].max() == 0
    ramp = np.tile(np.arange(12) * 0.25, (10, 1))
    np.testing.assert_allclose(gradient_magnitude(ramp)[1:-1, 1:-1], 0.25, atol=1e-12)


def test_bilinear():
    img = np.arange(12.0).reshape(3, 4)
    assert bilinear(img, [1.5, 1.0]) == pytest.approx(5.5)
    assert bilinear(img, [-1.0, 0.0]) == 0.0
    assert bilinear(img, [3.0, 2.0]) == 11.0


def test_on_edge_stays():
    patch, truth = _scene()
    res = refine_boundary(patch, truth)
    assert res.accepted
    assert np.linalg.norm(res.boundary - truth, axis=1).max() < 0.5


@pytest.mark.parametrize("shift", [(2.0, 0.0), (0.0, -2.0), (1.5, 1.5)])
def test_two_pixel_translation_recovered(shift):
    patch, truth = _scene()
    res = refine_boundary(patch, truth + shift)
    assert res.accepted and res.energy_after >= res.energy_before
    assert np.linalg.norm(res.boundary - truth, axis=1).max() < 0.5


def test_far_prediction_rejected_unchanged():
    patch, truth = _scene(size=160, offset=(50.0, 50.0))
    pred = truth + [20.0, 0.0]
    res = refine_boundary(patch, pred)
    assert not res.accepted
    assert res.boundary is pred
    np.testing.assert_array_equal(pred, truth + [20.0, 0.0])


def test_energy_never_decreases(rng):
    patch, truth = _scene()
    for _ in range(5):
        res = refine_boundary(patch, truth + rng.uniform(-3, 3, truth.shape),
                              RefineConfig(max_iterations=5))
        assert res.energy_after >= res.energy_before


def test_out_of_patch():
    patch, truth = _scene()
    with pytest.raises(OutOfPatch):
        refine_boundary(patch, truth - 31.0)
    with pytest.raises(ValueError):
        RefineConfig(discard_threshold=0)


def test_pgm_roundtrip(tmp_path):
    img = np.linspace(0, 1, 30 * 20).reshape(20, 30)
    write_pgm(tmp_path / "p.pgm", img)
    back = read_pgm(tmp_path / "p.pgm")
    assert back.shape == (20, 30)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 2\n255\n\x00\x10\x20\xff")
    np.testing.assert_allclose(read_pgm(tmp_path / "c.pgm"), [[0, 16 / 255], [32 / 255, 1]])
