import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nfar.errors import ShapeError
from nfar.grid import (GridField, GridSpec, downsample, from_csv, from_json, l2_norm, l2_norm_sq, sup_norm,
                       to_csv, to_json, load_csv, save_csv)


def test_grid_spec_coordinates_lie_in_unit_interval():
    spec = GridSpec(size=25)
    c = spec.coords()
    assert c[0] == 0.0
    assert c.max() < 1.0
    assert spec.weight == pytest.approx(1 / 625)


def test_grid_spec_rejects_single_point():
    with pytest.raises(ValueError):
        GridSpec(size=1)


def test_l2_norm_sq_examples():
    spec = GridSpec(size=25)
    assert l2_norm_sq(GridField.zeros(spec)) == 0.0
    assert l2_norm_sq(GridField.constant(spec, 1.0)) == pytest.approx(1.0, abs=1e-15)
    assert l2_norm_sq(GridField.from_array([[1, 2], [3, 4]])) == pytest.approx(7.5)


def test_sup_norm_examples():
    values = np.zeros((4, 4))
    values[2, 1] = -7
    assert sup_norm(GridField.from_array(values)) == 7.0
    assert sup_norm(GridField.from_array([[1, 2], [3, -4]])) == 4.0


def test_norm_homogeneity_and_holder_bound():
    rng = np.random.default_rng(3)
    f = GridField.from_array(rng.normal(size=(8, 8)))
    assert_allclose(l2_norm_sq(f.scale(-2.5)), 6.25 * l2_norm_sq(f), rtol=1e-13)
    assert l2_norm_sq(f) <= sup_norm(f) ** 2
    assert l2_norm(f) == pytest.approx(np.sqrt(l2_norm_sq(f)))


def test_field_is_immutable_and_finite():
    f = GridField.from_array(np.ones((3, 3)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0
    with pytest.raises(ValueError):
        GridField.from_array([[1.0, np.nan], [0.0, 0.0]])


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError):
        GridField(spec=GridSpec(size=3), values=np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        GridField.from_array(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        GridField.zeros(GridSpec(size=2)) + GridField.zeros(GridSpec(size=3))


def test_downsample_is_point_evaluation():
    values = np.arange(100 * 100, dtype=float).reshape(100, 100)
    out = downsample(GridField.from_array(values), GridSpec(size=25))
    assert out.values[3, 7] == values[12, 28]
    assert_array_equal(out.values, values[::4, ::4])

    small = GridField.from_array(np.arange(16, dtype=float).reshape(4, 4))
    assert_array_equal(downsample(small, GridSpec(size=2)).values, [[0, 2], [8, 10]])


def test_downsample_identity_and_commutes_with_pointwise_maps():
    f = GridField.from_array(np.random.default_rng(0).normal(size=(12, 12)))
    assert_array_equal(downsample(f, GridSpec(size=12)).values, f.values)
    target = GridSpec(size=4)
    assert_array_equal(downsample(f.map(np.cos), target).values, downsample(f, target).map(np.cos).values)


def test_downsample_rejects_non_divisible_sizes():
    with pytest.raises(ShapeError):
        downsample(GridField.zeros(GridSpec(size=10)), GridSpec(size=4))


def test_csv_layout_and_exact_reload(tmp_path):
    f = GridField.from_array([[0.1, 1 / 3], [-2.0, 1e-300]])
    text = to_csv(f)
    assert text.splitlines()[0].count(',') == 1
    assert len(text.splitlines()) == 2
    assert_array_equal(from_csv(text).values, f.values)

    path = tmp_path / "field.csv"
    save_csv(f, str(path))
    assert_array_equal(load_csv(str(path)).values, f.values)


def test_json_wrapper_carries_size():
    f = GridField.from_array(np.eye(3))
    assert from_json(to_json(f)).spec.size == 3
    assert_array_equal(from_json(to_json(f)).values, np.eye(3))
