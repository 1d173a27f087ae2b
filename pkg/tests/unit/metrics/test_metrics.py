import math

import numpy as np
import pytest

from infogain.density import log_likelihood_bits, normalize_to_pmf, uniform_density
from infogain.errors import (
    ConstantVectorError,
    DegenerateAnchorsError,
    EmptyListError,
    SingleImageError,
    SupportViolationError,
)
from infogain.maps import ratio_map
from infogain.metrics import (
    auc,
    auc_for_model,
    ellr_identity_check,
    kl_fixation_based,
    kl_from_scores,
    kl_image_based,
    map_as_density,
    metric_correlations,
    nonfixation_scores,
    population_auc,
    rescale_metric,
    weighted_auc,
)
from infogain.models import DensityGrid, ImageFrame, KlSpec, NonfixationSpec
from infogain.synth import centre_prior, sample_spatial

pytestmark = pytest.mark.unit

EXHAUSTIVE = NonfixationSpec(kind="uniform-pixels", exhaustive=True)


# --- AUC ---


@pytest.mark.parametrize(
    "fix, nonfix, expected",
    [
        ([1.0], [0.0], 1.0),
        ([1.0], [1.0], 0.5),
        ([2.0, 0.0], [1.0, 0.0], 0.625),
        ([0.0], [1.0], 0.0),
    ],
)
def test_auc_examples(fix, nonfix, expected):
    assert auc(fix, nonfix) == pytest.approx(expected)


def test_weights_act_as_multiplicities():
    weighted = weighted_auc([2.0, 0.0], [1.0, 0.0], w_fix=np.array([3.0, 1.0]))
    repeated = auc([2.0, 2.0, 2.0, 0.0], [1.0, 0.0])
    assert weighted == pytest.approx(repeated)


def test_auc_is_invariant_under_monotone_transform(rng):
    fix = rng.normal(0.5, 1.0, 200)
    nonfix = rng.normal(0.0, 1.0, 300)
    assert auc(np.exp(fix), np.exp(nonfix)) == pytest.approx(auc(fix, nonfix), abs=1e-12)
    assert auc(-fix, -nonfix) == pytest.approx(1.0 - auc(fix, nonfix), abs=1e-12)


def test_auc_needs_both_sides():
    with pytest.raises(EmptyListError):
        auc([], [1.0])


def test_uniform_map_has_chance_auc(make_train):
    frame = ImageFrame(image_id="u", width=5, height=5)
    trains = [make_train("u", "s", [(1, 1), (3, 4), (0, 2)])]
    model = {"u": uniform_density(frame)}
    assert auc_for_model(model, trains, [frame], EXHAUSTIVE) == pytest.approx(0.5)


def test_half_indicator_map(make_train):
    frame = ImageFrame(image_id="h", width=4, height=4)
    values = np.zeros(frame.shape)
    values[:, :2] = 1.0
    trains = [make_train("h", "s", [(0, 0), (1, 3), (0, 2)])]
    assert auc_for_model({"h": values}, trains, [frame], EXHAUSTIVE) == pytest.approx(0.75)


def test_population_auc_against_uniform_prior():
    frame = ImageFrame(image_id="p", width=4, height=4)
    values = np.zeros(frame.shape)
    values[:, :2] = 1.0
    fixations = normalize_to_pmf(values, image_id="p")
    assert population_auc(values, fixations, uniform_density(frame)) == pytest.approx(0.75)


def test_ratio_map_has_the_best_shuffled_auc():
    frame = ImageFrame(image_id="r", width=8, height=8)
    rng = np.random.default_rng(21)
    prior = normalize_to_pmf(centre_prior(frame, 4.0), image_id="r")
    fixations = normalize_to_pmf(prior.pmf * (rng.random(frame.shape) + 0.2), image_id="r")
    ratio = ratio_map(fixations, prior)
    best = population_auc(ratio, fixations, prior)
    for _ in range(50):
        candidate = ratio * np.exp(rng.normal(0.0, 0.5, frame.shape))
        assert population_auc(candidate, fixations, prior) <= best + 1e-12


def test_shuffled_nonfixations_come_from_other_images(make_train):
    frames = {
        "a": ImageFrame(image_id="a", width=4, height=4),
        "b": ImageFrame(image_id="b", width=8, height=8),
    }
    trains = [make_train("a", "s", [(0, 0)]), make_train("b", "s", [(6, 6), (2, 0)])]
    values = np.arange(16.0).reshape(4, 4)
    spec = NonfixationSpec(kind="shuffled-fixations", exhaustive=True)
    scores = nonfixation_scores(values, frames["a"], frames, trains, spec)
    # (6, 6) on 8x8 maps to (3, 3) on 4x4, (2, 0) to (1, 0)
    assert sorted(scores.tolist()) == [1.0, 15.0]


def test_shuffled_needs_two_images(make_train):
    frame = ImageFrame(image_id="a", width=4, height=4)
    spec = NonfixationSpec(kind="shuffled-fixations")
    with pytest.raises(SingleImageError):
        nonfixation_scores(np.ones((4, 4)), frame, {"a": frame}, [make_train("a", "s", [(0, 0)])], spec)


def test_sampled_nonfixations_are_reproducible():
    frame = ImageFrame(image_id="a", width=6, height=6)
    values = np.arange(36.0).reshape(6, 6)
    spec = NonfixationSpec(exhaustive=False, n_samples=50, seed=3)
    a = nonfixation_scores(values, frame, {"a": frame}, [], spec)
    b = nonfixation_scores(values, frame, {"a": frame}, [], spec)
    assert a.size == 50
    np.testing.assert_array_equal(a, b)


# --- KL ---


def test_kl_from_scores_hand_case():
    assert kl_from_scores([1.0, 1.0], [0.0, 1.0], bins=2, epsilon=1e-12) == pytest.approx(
        1.0, abs=1e-6
    )


def test_kl_from_scores_identical_is_zero(rng):
    x = rng.random(100)
    assert kl_from_scores(x, x) == pytest.approx(0.0, abs=1e-12)


def test_kl_unchanged_by_inverting_the_map(rng):
    fix = rng.normal(1.0, 1.0, 150)
    nonfix = rng.normal(0.0, 1.0, 400)
    assert kl_from_scores(-fix, -nonfix) == pytest.approx(kl_from_scores(fix, nonfix), abs=1e-9)


def _concentrated_quantized_map():
    frame = ImageFrame(image_id="c", width=32, height=32)
    pmf = normalize_to_pmf(centre_prior(frame, 1000.0), image_id="c")
    trains = sample_spatial(frame, pmf, 4, 100, seed=5)
    quantized = np.round(4 * pmf.pmf / pmf.pmf.max()) / 4
    return frame, trains, quantized


def test_inverted_quantized_map_keeps_kl_but_not_likelihood():
    frame, trains, quantized = _concentrated_quantized_map()
    inverted = 1.0 - quantized
    kl = kl_fixation_based({"c": quantized}, trains, [frame], nonfixations=EXHAUSTIVE)
    kl_inverted = kl_fixation_based({"c": inverted}, trains, [frame], nonfixations=EXHAUSTIVE)
    assert kl > 0.3
    assert kl_inverted == pytest.approx(kl, abs=1e-12)
    ll = log_likelihood_bits(map_as_density(quantized, 0.01, "c"), trains)
    ll_inverted = log_likelihood_bits(map_as_density(inverted, 0.01, "c"), trains)
    assert ll - ll_inverted > 0.5


def test_kl_invariant_under_relabeling_of_levels():
    frame, trains, quantized = _concentrated_quantized_map()
    levels, index = np.unique(quantized, return_inverse=True)
    relabeled = np.random.default_rng(8).permutation(levels)[index.reshape(quantized.shape)]
    kl = kl_fixation_based({"c": quantized}, trains, [frame], nonfixations=EXHAUSTIVE)
    assert kl_fixation_based({"c": relabeled}, trains, [frame], nonfixations=EXHAUSTIVE) == (
        pytest.approx(kl, abs=1e-12)
    )


def test_kl_of_levels_on_interior_bin_edges():
    # 0.25 sits on an interior edge of four equal-width bins and 0.75 on its mirror
    fix = np.array([0.25, 0.25, 0.25, 1.0])
    nonfix = np.array([0.0, 0.0, 0.3, 0.3, 1.0])
    assert kl_from_scores(1.0 - fix, 1.0 - nonfix, bins=4) == pytest.approx(
        kl_from_scores(fix, nonfix, bins=4), abs=1e-12
    )


def test_kl_fixation_based_rejects_image_variant(make_train):
    frame = ImageFrame(image_id="a", width=3, height=3)
    with pytest.raises(ValueError):
        kl_fixation_based(
            {"a": np.ones((3, 3))},
            [make_train("a", "s", [(0, 0)])],
            [frame],
            KlSpec(variant="image-based"),
        )


def test_kl_fixation_based_positive_for_informative_map(make_train):
    frame = ImageFrame(image_id="k", width=4, height=4)
    values = np.zeros(frame.shape)
    values[0, 0] = 1.0
    trains = [make_train("k", "s", [(0, 0)] * 4)]
    assert kl_fixation_based({"k": values}, trains, [frame], nonfixations=EXHAUSTIVE) > 1.0


def test_kl_image_based_examples():
    model = DensityGrid(image_id="k", pmf=np.full((2, 2), 0.25))
    half = DensityGrid(image_id="k", pmf=np.array([[0.5, 0.5], [0.0, 0.0]]))
    assert kl_image_based(model, half) == pytest.approx(1.0)
    assert kl_image_based(model, model) == 0.0

    skewed = DensityGrid(image_id="k", pmf=np.array([[0.5, 0.25], [0.125, 0.125]]))
    delta = DensityGrid(image_id="k", pmf=np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert kl_image_based(skewed, delta) == pytest.approx(-math.log2(0.125))


def test_kl_image_based_support_violation():
    model = DensityGrid(image_id="k", pmf=np.array([[1.0, 0.0], [0.0, 0.0]]))
    reference = DensityGrid(image_id="k", pmf=np.full((2, 2), 0.25))
    with pytest.raises(SupportViolationError):
        kl_image_based(model, reference)


def test_ellr_identity(rng):
    p, q1, q2 = (normalize_to_pmf(rng.random((5, 5)) + 0.05, image_id="e") for _ in range(3))
    lhs, rhs = ellr_identity_check(p, q1, q2)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_map_as_density_adds_epsilon():
    g = map_as_density(np.array([[0.0, 1.0]]), 1.0, image_id="m")
    np.testing.assert_allclose(g.pmf, [[1 / 3, 2 / 3]])
    assert g.image_id == "m"


# --- rescaling and correlations ---


def test_rescale_anchors():
    assert rescale_metric(0.6, 0.6, 0.9) == 0.0
    assert rescale_metric(0.9, 0.6, 0.9) == pytest.approx(1.0)
    assert rescale_metric(0.75, 0.6, 0.9) == pytest.approx(0.5)
    with pytest.raises(DegenerateAnchorsError):
        rescale_metric(0.7, 0.8, 0.8)


def test_correlations_of_perfect_and_inverted_metrics():
    out = metric_correlations({"up": [1.0, 2.0, 3.0], "down": [3.0, 2.0, 1.0]}, [0.1, 0.2, 0.4])
    assert out["up"][1] == pytest.approx(1.0)
    assert out["up"][0] > 0.9
    assert out["down"][0] < -0.9
    assert out["down"][1] == pytest.approx(-1.0)


def test_linear_metric_has_unit_pearson():
    r, rho = metric_correlations({"m": [1.0, 2.0, 3.0]}, [2.0, 4.0, 6.0])["m"]
    assert r == pytest.approx(1.0)
    assert rho == pytest.approx(1.0)


def test_spearman_hand_case():
    _, rho = metric_correlations({"m": [1.0, 2.0, 3.0, 4.0, 5.0]}, [2.0, 1.0, 4.0, 3.0, 5.0])["m"]
    assert rho == pytest.approx(0.8)


def test_correlation_errors():
    with pytest.raises(EmptyListError):
        metric_correlations({"m": [1.0, 2.0]}, [1.0, 2.0])
    with pytest.raises(ConstantVectorError):
        metric_correlations({"m": [1.0, 2.0, 3.0]}, [1.0, 1.0, 1.0])
    with pytest.raises(ConstantVectorError) as exc:
        metric_correlations({"flat": [2.0, 2.0, 2.0]}, [1.0, 2.0, 3.0])
    assert exc.value.details["metric_id"] == "flat"
