import numpy as np
import pytest

from infogain.density import normalize_to_pmf, uniform_density
from infogain.errors import ImageMismatchError, SupportViolationError, ZeroPriorError
from infogain.maps import (
    info_gain_diff_map,
    info_gain_map,
    possible_gain_map,
    ratio_map,
    render_png,
    scatter_data,
)
from infogain.metrics import kl_image_based
from infogain.models import DensityGrid, ImageFrame

pytestmark = pytest.mark.unit

FRAME = ImageFrame(image_id="m", width=2, height=2)


def _grid(values) -> DensityGrid:
    return DensityGrid(image_id="m", pmf=np.asarray(values, dtype=float))


def test_ratio_map_example():
    out = ratio_map(_grid([[0.5, 0.5], [0.0, 0.0]]), uniform_density(FRAME))
    np.testing.assert_allclose(out, [[2.0, 2.0], [0.0, 0.0]])


def test_ratio_map_needs_positive_prior():
    with pytest.raises(ZeroPriorError):
        ratio_map(uniform_density(FRAME), _grid([[1.0, 0.0], [0.0, 0.0]]))


def test_ratio_map_shape_mismatch():
    other = uniform_density(ImageFrame(image_id="o", width=3, height=2))
    with pytest.raises(ImageMismatchError):
        ratio_map(uniform_density(FRAME), other)


def test_info_gain_of_prior_is_zero():
    gold = _grid([[0.4, 0.3], [0.2, 0.1]])
    prior = uniform_density(FRAME)
    out = info_gain_map(gold, prior, prior)
    assert out.kind == "info_gain"
    np.testing.assert_array_equal(out.grid, 0.0)


def test_info_gain_with_delta_gold():
    gold = _grid([[1.0, 0.0], [0.0, 0.0]])
    model = _grid([[0.5, 0.25], [0.125, 0.125]])
    out = info_gain_map(gold, model, uniform_density(FRAME))
    np.testing.assert_allclose(out.grid, [[1.0, 0.0], [0.0, 0.0]])


def test_info_gain_sums_to_weighted_gain(rng):
    gold, model, prior = (normalize_to_pmf(rng.random((6, 5)) + 0.1, image_id="m") for _ in range(3))
    expected = float(np.sum(gold.pmf * np.log2(model.pmf / prior.pmf)))
    assert info_gain_map(gold, model, prior).total == pytest.approx(expected, abs=1e-12)


def test_diff_map_sums_to_minus_kl(rng):
    gold, model, prior = (normalize_to_pmf(rng.random((6, 5)) + 0.1, image_id="m") for _ in range(3))
    out = info_gain_diff_map(gold, model, prior)
    assert out.kind == "diff"
    assert out.total == pytest.approx(-kl_image_based(model, gold), abs=1e-12)
    assert out.total <= 0.0


def test_possible_gain_is_info_gain_of_gold(rng):
    gold, prior = (normalize_to_pmf(rng.random((4, 4)) + 0.1, image_id="m") for _ in range(2))
    possible = possible_gain_map(gold, prior)
    np.testing.assert_allclose(possible.grid, info_gain_map(gold, gold, prior).grid)
    assert possible.total >= 0.0


def test_gain_maps_need_support_where_gold_has_mass():
    gold = uniform_density(FRAME)
    model = _grid([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(SupportViolationError):
        info_gain_map(gold, model, uniform_density(FRAME))


def test_scatter_point_example():
    (point,) = scatter_data({"a": 3.0}, {"a": 1.0}, {"a": 2.0})
    assert point.image_id == "a"
    assert point.possible_gain == pytest.approx(2.0)
    assert point.explained == pytest.approx(50.0)
    assert point.flags == []


def test_scatter_flags_are_not_clamped():
    gold = {"below": 3.0, "above": 3.0, "flat": 1.0}
    baseline = {"below": 1.0, "above": 1.0, "flat": 1.0}
    model = {"below": 0.5, "above": 4.0, "flat": 2.0}
    points = {p.image_id: p for p in scatter_data(gold, baseline, model)}
    assert list(points) == ["above", "below", "flat"]
    assert points["below"].explained == pytest.approx(-25.0)
    assert points["below"].flags == ["below_baseline"]
    assert points["above"].explained == pytest.approx(150.0)
    assert points["above"].flags == ["above_gold"]
    assert points["flat"].explained is None
    assert points["flat"].flags == ["no_possible_gain"]


def test_render_png(tmp_path):
    pytest.importorskip("matplotlib")
    path = render_png(np.array([[-1.0, 0.0], [0.5, 1.0]]), tmp_path / "gain.png")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
