import math

import numpy as np
import pytest

from infogain.calibration import (
    CalibrationProblem,
    apply_nonlinearity,
    build_model_density,
    center_bias_weight,
    contribution_breakdown,
    contributions_from_stages,
    global_rescale,
    optimize_calibration,
    run_stages,
)
from infogain.density import (
    gaussian_blur,
    log_likelihood_bits,
    log_likelihood_bits_per_image,
    normalize_to_pmf,
)
from infogain.errors import ConstantModelError, EmptyListError, OutOfSupportError
from infogain.metrics import auc_for_model
from infogain.models import (
    CalibrationParams,
    CenterBias,
    ImageFrame,
    NonfixationSpec,
    OptimizerConfig,
    PiecewiseLinear,
    SaliencyMap,
    Stage,
)
from infogain.synth import sample_spatial

pytestmark = pytest.mark.unit

FLOOR = 1e-6


def _smap(values, image_id: str = "a", model_id: str = "m") -> SaliencyMap:
    return SaliencyMap(image_id=image_id, model_id=model_id, values=np.asarray(values, dtype=float))


def _identity(k: int = 20) -> PiecewiseLinear:
    return PiecewiseLinear(values=tuple(np.linspace(0.0, 1.0, k) + FLOOR))


def _smooth_map(frame: ImageFrame, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    values = gaussian_blur(rng.random(frame.shape), 3.0)
    return (values - values.min()) / (values.max() - values.min())


# --- global rescale ---


def test_rescale_uses_one_global_range():
    out = global_rescale([_smap([[0.0, 2.0]]), _smap([[1.0, 2.0]], image_id="b")])
    np.testing.assert_allclose(out[0].values, [[0.0, 1.0]])
    np.testing.assert_allclose(out[1].values, [[0.5, 1.0]])


def test_rescale_keeps_unit_range_and_mapping_keys():
    maps = {"a": _smap([[0.0, 0.25], [0.5, 1.0]])}
    out = global_rescale(maps)
    assert list(out) == ["a"]
    np.testing.assert_allclose(out["a"].values, maps["a"].values)


def test_rescale_rejects_constant_and_empty():
    with pytest.raises(ConstantModelError):
        global_rescale([_smap(np.full((2, 2), 3.0)), _smap(np.full((2, 2), 3.0), image_id="b")])
    with pytest.raises(EmptyListError):
        global_rescale([])


# --- nonlinearity and centre bias ---


def test_identity_nonlinearity_adds_floor(rng):
    x = rng.random((6, 7))
    np.testing.assert_allclose(apply_nonlinearity(x, _identity()), x + FLOOR, atol=1e-12)


def test_constant_nonlinearity():
    f = PiecewiseLinear(values=(0.3,) * 5)
    np.testing.assert_array_equal(apply_nonlinearity(np.array([[0.0, 0.4], [0.9, 1.0]]), f), 0.3)


def test_hand_interpolation():
    f = PiecewiseLinear(values=(0.1, 0.2, 0.8))
    assert apply_nonlinearity(np.array([[0.75]]), f)[0, 0] == pytest.approx(0.5)


def test_nonlinearity_out_of_support():
    with pytest.raises(OutOfSupportError):
        apply_nonlinearity(np.array([[1.5]]), _identity())


def test_monotone_flag():
    assert _identity().is_monotone()
    assert not PiecewiseLinear(values=(0.1, 0.3, 0.2)).is_monotone()


def test_flat_centre_bias_is_ones():
    frame = ImageFrame(image_id="a", width=7, height=5)
    cb = CenterBias(profile=PiecewiseLinear(values=(1.0,) * 6), alpha=2.0)
    np.testing.assert_array_equal(center_bias_weight(frame, cb), np.ones((5, 7)))


def test_decreasing_profile_favours_centre():
    frame = ImageFrame(image_id="a", width=9, height=9)
    cb = CenterBias(profile=PiecewiseLinear(values=(1.0, 0.5, 0.1)), alpha=1.0)
    w = center_bias_weight(frame, cb)
    assert w[4, 4] > w[0, 0]


def test_centre_bias_direct_formula():
    frame = ImageFrame(image_id="a", width=5, height=5)
    alpha = 4.0
    cb = CenterBias(profile=PiecewiseLinear(values=(0.1, 0.55, 1.0)), alpha=alpha)
    r_max = math.sqrt(4 + alpha * 4)
    expected = np.zeros((5, 5))
    for row in range(5):
        for col in range(5):
            d = math.sqrt((col - 2) ** 2 + alpha * (row - 2) ** 2) / r_max
            expected[row, col] = 0.1 + 0.9 * d
    np.testing.assert_allclose(center_bias_weight(frame, cb), expected, atol=1e-12)


# --- model density ---


def test_uniform_map_identity_gives_uniform():
    frame = ImageFrame(image_id="a", width=6, height=4)
    params = CalibrationParams(stage=Stage.NONLIN, nonlinearity=_identity())
    g = build_model_density(_smap(np.full((4, 6), 0.4)), params, frame)
    np.testing.assert_allclose(g.pmf, np.full((4, 6), 1 / 24))


def test_neutral_factors_do_not_change_density(rng):
    frame = ImageFrame(image_id="a", width=8, height=6)
    smap = _smap(rng.random((6, 8)))
    nonlin = PiecewiseLinear(values=(0.01, 0.2, 0.25, 0.9))
    flat = CenterBias(profile=PiecewiseLinear(values=(1.0,) * 4), alpha=1.0)
    only_nl = build_model_density(smap, CalibrationParams(stage=Stage.NONLIN, nonlinearity=nonlin), frame)
    with_cb = build_model_density(
        smap, CalibrationParams(stage=Stage.CENTERBIAS, nonlinearity=nonlin, center_bias=flat), frame
    )
    with_blur = build_model_density(
        smap,
        CalibrationParams(stage=Stage.BLUR, nonlinearity=nonlin, center_bias=flat, blur_sigma=0.0),
        frame,
    )
    np.testing.assert_allclose(only_nl.pmf, with_cb.pmf, atol=1e-15)
    np.testing.assert_allclose(with_cb.pmf, with_blur.pmf, atol=1e-15)


def test_stage_fields_are_checked():
    with pytest.raises(ValueError):
        CalibrationParams(stage=Stage.NONLIN, nonlinearity=_identity(), blur_sigma=1.0)


def test_params_json_round_trip():
    params = CalibrationParams(
        stage=Stage.BLUR,
        nonlinearity=_identity(4),
        center_bias=CenterBias(profile=PiecewiseLinear(values=(1.0, 0.5)), alpha=1.5),
        blur_sigma=2.0,
    )
    assert CalibrationParams.from_json(params.to_json()) == params


# --- optimization ---


def _dataset(n_images: int = 2, size: int = 16, fixations: int = 300, power: float = 1.0, seed: int = 0):
    maps, trains = {}, []
    for i in range(n_images):
        frame = ImageFrame(image_id=f"i{i}", width=size, height=size)
        values = _smooth_map(frame, seed + i)
        maps[frame.image_id] = _smap(values, image_id=frame.image_id)
        pmf = normalize_to_pmf(values**power + 1e-3, image_id=frame.image_id)
        trains += sample_spatial(frame, pmf, 3, fixations // 3, seed=seed + 100 + i)
    return maps, trains


def _finite_difference(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    fd = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        fd[k] = (f(up) - f(down)) / (2 * h)
    return fd


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    maps, trains = _dataset(n_images=2, size=12, fixations=60)
    config = OptimizerConfig()
    problem = CalibrationProblem(maps, trains, Stage.BLUR, config)
    rng = np.random.default_rng(seed)
    theta = np.concatenate(
        [
            rng.uniform(0.01, 0.2, config.n_nonlin_knots),
            rng.uniform(0.2, 1.5, config.n_cb_knots),
            [rng.uniform(-0.5, 0.5)],
            [rng.uniform(0.3, 3.0)],
        ]
    )
    assert theta.size == problem.size
    _, grad = problem.objective_and_gradient(theta)
    fd = _finite_difference(problem.log_likelihood, theta)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_optimized_likelihood_matches_built_density():
    maps, trains = _dataset()
    params, ll = optimize_calibration(maps, trains, Stage.BLUR)
    frames = {k: ImageFrame(image_id=k, width=16, height=16) for k in maps}
    densities = {k: build_model_density(maps[k], params, frames[k]) for k in maps}
    assert log_likelihood_bits_per_image(densities, trains)[0] == pytest.approx(ll, abs=1e-9)


def test_self_consistent_map_improves_on_identity():
    maps, trains = _dataset()
    identity = CalibrationParams(stage=Stage.NONLIN, nonlinearity=_identity())
    densities = {
        k: build_model_density(m, identity, ImageFrame(image_id=k, width=16, height=16))
        for k, m in maps.items()
    }
    ll_identity, _ = log_likelihood_bits_per_image(densities, trains)
    params, ll = optimize_calibration(maps, trains, Stage.NONLIN)
    assert params.nonlinearity.is_monotone()
    assert ll >= ll_identity - 1e-9


def test_square_nonlinearity_is_recovered():
    maps, trains = _dataset(n_images=2, size=32, fixations=12000, power=2.0, seed=4)
    _, ll = optimize_calibration(maps, trains, Stage.NONLIN)
    oracle = [
        log_likelihood_bits(
            normalize_to_pmf(m.values**2 + 1e-3, image_id=k), [t for t in trains if t.image_id == k]
        )
        * sum(len(t) for t in trains if t.image_id == k)
        for k, m in maps.items()
    ]
    oracle_ll = sum(oracle) / sum(len(t) for t in trains)
    assert abs(ll - oracle_ll) < 0.05


def test_stages_are_nested():
    maps, trains = _dataset(seed=9)
    results = run_stages(maps, trains)
    lls = [results[s][1] for s in Stage]
    assert lls[0] <= lls[1] + 1e-6
    assert lls[1] <= lls[2] + 1e-6
    nonlin, cb, blur = contributions_from_stages(results)
    assert nonlin == lls[0]
    assert cb == pytest.approx(lls[1] - lls[0])
    assert blur == pytest.approx(lls[2] - lls[1])
    final = results[Stage.BLUR][0]
    assert final.center_bias is not None
    assert 0.0 <= final.blur_sigma <= 16.0


def test_centre_bias_is_learned_from_flat_map():
    frame = ImageFrame(image_id="c", width=32, height=32)
    yy, xx = np.mgrid[0:32, 0:32]
    d2 = ((xx - 15.5) ** 2 + (yy - 15.5) ** 2) / (2 * 15.5**2)
    generator = normalize_to_pmf(np.exp(-math.log(1000.0) * d2), image_id="c")
    trains = sample_spatial(frame, generator, 5, 400, seed=3)
    flat = np.zeros((32, 32))
    flat[0, 0] = 1.0
    maps = {"c": _smap(flat, image_id="c")}
    results = run_stages(maps, trains, stages=(Stage.NONLIN, Stage.CENTERBIAS))
    assert results[Stage.CENTERBIAS][1] - results[Stage.NONLIN][1] > 0.2


def test_contribution_breakdown_matches_stage_run():
    maps, trains = _dataset(n_images=1, size=12, fixations=60, seed=2)
    config = OptimizerConfig(max_iter=50)
    breakdown = contribution_breakdown(maps, trains, config)
    assert breakdown == contributions_from_stages(run_stages(maps, trains, config))
    assert breakdown[1] >= -1e-9
    assert breakdown[2] >= -1e-9


def test_monotone_nonlinearity_keeps_auc_but_moves_likelihood():
    maps, trains = _dataset()
    frames = [ImageFrame(image_id=k, width=16, height=16) for k in sorted(maps)]
    steep = PiecewiseLinear(values=tuple(np.linspace(0.0, 1.0, 20) ** 6 + FLOOR))
    assert steep.is_monotone()
    spec = NonfixationSpec(kind="uniform-pixels", exhaustive=True)
    raw_auc = auc_for_model({k: m.values for k, m in maps.items()}, trains, frames, spec)
    steep_auc = auc_for_model(
        {k: apply_nonlinearity(m.values, steep) for k, m in maps.items()}, trains, frames, spec
    )
    assert steep_auc == pytest.approx(raw_auc, abs=1e-9)

    def ll(nonlinearity: PiecewiseLinear) -> float:
        params = CalibrationParams(stage=Stage.NONLIN, nonlinearity=nonlinearity)
        densities = {
            frame.image_id: build_model_density(maps[frame.image_id], params, frame)
            for frame in frames
        }
        return log_likelihood_bits_per_image(densities, trains)[0]

    assert abs(ll(steep) - ll(_identity())) > 0.1
