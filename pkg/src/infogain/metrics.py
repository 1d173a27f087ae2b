"""
Classic saliency metrics (uniform and shuffled AUC, fixation-based and
image-based KL divergence), their rescaling to the baseline/gold-standard
anchors, and their correlation with information gain.
"""

import logging
from collections.abc import Mapping, Sequence

import numpy as np
from scipy import stats

from infogain.density import normalize_to_pmf, snap_to_pixel, snap_train
from infogain.errors import (
    ConstantVectorError,
    DegenerateAnchorsError,
    EmptyListError,
    ImageMismatchError,
    SingleImageError,
    SupportViolationError,
)
from infogain.models import (
    DensityGrid,
    FixationTrain,
    ImageFrame,
    KlSpec,
    NonfixationSpec,
    SaliencyMap,
)

logger = logging.getLogger("infogain.metrics")

GridLike = np.ndarray | DensityGrid | SaliencyMap


def _values(grid: GridLike) -> np.ndarray:
    if isinstance(grid, DensityGrid):
        return grid.pmf
    if isinstance(grid, SaliencyMap):
        return grid.values
    return np.asarray(grid, dtype=np.float64)


# --- AUC ---


def weighted_auc(
    scores_fix: Sequence[float] | np.ndarray,
    scores_nonfix: Sequence[float] | np.ndarray,
    w_fix: np.ndarray | None = None,
    w_nonfix: np.ndarray | None = None,
) -> float:
    """
    Probability that a fixation outscores a nonfixation, ties counting one
    half, for weighted samples. With unit weights this is the Mann-Whitney
    statistic.
    """
    fix = np.asarray(scores_fix, dtype=np.float64).ravel()
    nonfix = np.asarray(scores_nonfix, dtype=np.float64).ravel()
    if fix.size == 0 or nonfix.size == 0:
        raise EmptyListError(
            "AUC needs fixation and nonfixation scores",
            n_fix=int(fix.size),
            n_nonfix=int(nonfix.size),
        )
    wf_in = np.ones(fix.size) if w_fix is None else np.asarray(w_fix, dtype=np.float64).ravel()
    wn_in = (
        np.ones(nonfix.size) if w_nonfix is None else np.asarray(w_nonfix, dtype=np.float64).ravel()
    )

    uniq, inverse = np.unique(np.concatenate([fix, nonfix]), return_inverse=True)
    wf = np.bincount(inverse[: fix.size], weights=wf_in, minlength=uniq.size)
    wn = np.bincount(inverse[fix.size :], weights=wn_in, minlength=uniq.size)
    norm = wf.sum() * wn.sum()
    if norm <= 0:
        raise EmptyListError("AUC weights sum to zero")
    below = np.cumsum(wn) - wn
    return float((wf * (below + 0.5 * wn)).sum() / norm)


def auc(scores_at_fixations: Sequence[float], scores_at_nonfixations: Sequence[float]) -> float:
    return weighted_auc(scores_at_fixations, scores_at_nonfixations)


def fixation_scores(
    grid: GridLike, frame: ImageFrame, trains: Sequence[FixationTrain]
) -> np.ndarray:
    values = _values(grid)
    if values.shape != frame.shape:
        raise ImageMismatchError(
            "grid does not match frame", image_id=frame.image_id, shape=list(values.shape)
        )
    out = []
    for train in trains:
        cols, rows = snap_train(frame, train)
        out.append(values[rows, cols])
    return np.concatenate(out) if out else np.empty(0)


def _shuffled_pool(
    frame: ImageFrame, frames: Mapping[str, ImageFrame], trains: Sequence[FixationTrain]
) -> tuple[np.ndarray, np.ndarray]:
    """Fixations of every other image, mapped onto this frame's raster."""
    xs, ys = [], []
    for train in trains:
        if train.image_id == frame.image_id or not train.fixations:
            continue
        other = frames[train.image_id]
        xy = train.coordinates()
        xs.append(xy[:, 0] * frame.width / other.width)
        ys.append(xy[:, 1] * frame.height / other.height)
    if not xs:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    return snap_to_pixel(frame, np.concatenate(xs), np.concatenate(ys))


def nonfixation_scores(
    grid: GridLike,
    frame: ImageFrame,
    frames: Mapping[str, ImageFrame],
    trains: Sequence[FixationTrain],
    spec: NonfixationSpec,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    values = _values(grid)
    if spec.kind == "uniform-pixels":
        if spec.exhaustive:
            return values.ravel().copy()
        rng = rng or np.random.default_rng(spec.seed)
        return values.ravel()[rng.integers(0, values.size, spec.n_samples)]

    if len(frames) < 2:
        raise SingleImageError("shuffled nonfixations need at least 2 images")
    cols, rows = _shuffled_pool(frame, frames, trains)
    if not spec.exhaustive and cols.size:
        rng = rng or np.random.default_rng(spec.seed)
        pick = rng.integers(0, cols.size, spec.n_samples)
        cols, rows = cols[pick], rows[pick]
    return values[rows, cols]


def _image_rngs(spec: NonfixationSpec, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(spec.seed).spawn(n)]


def auc_for_model(
    model: Mapping[str, GridLike],
    trains: Sequence[FixationTrain],
    frames: Sequence[ImageFrame],
    spec: NonfixationSpec,
) -> float:
    """Fixation-count-weighted mean over images of the per-image AUC."""
    by_id = {f.image_id: f for f in frames}
    rngs = _image_rngs(spec, len(frames))
    total = 0.0
    count = 0
    for frame, rng in zip(frames, rngs):
        image_trains = [t for t in trains if t.image_id == frame.image_id]
        fix = fixation_scores(model[frame.image_id], frame, image_trains)
        if fix.size == 0:
            continue
        nonfix = nonfixation_scores(model[frame.image_id], frame, by_id, trains, spec, rng)
        total += auc(fix, nonfix) * fix.size
        count += fix.size
    if count == 0:
        raise EmptyListError("no fixations to score")
    return total / count


def population_auc(
    scores: np.ndarray, fixation_pmf: DensityGrid, nonfixation_pmf: DensityGrid
) -> float:
    """AUC when fixations and nonfixations are whole pixel distributions rather
    than samples; with the prior as nonfixation distribution this is the
    large-sample shuffled AUC."""
    return weighted_auc(
        _values(scores), _values(scores), w_fix=fixation_pmf.pmf, w_nonfix=nonfixation_pmf.pmf
    )


# --- KL divergences ---


def kl_from_scores(
    scores_fix: np.ndarray, scores_nonfix: np.ndarray, bins: int = 10, epsilon: float = 1e-9
) -> float:
    """
    KL divergence in bits between histograms of fixation and nonfixation scores.

    Scores with at most `bins` distinct levels are histogrammed one level per
    bin, so any one-to-one relabeling of the levels leaves the value unchanged.
    Otherwise `bins` equal-width bins span the pooled range; a score lying
    exactly on an interior edge counts in the upper bin.
    """
    fix = np.asarray(scores_fix, dtype=np.float64).ravel()
    nonfix = np.asarray(scores_nonfix, dtype=np.float64).ravel()
    if fix.size == 0 or nonfix.size == 0:
        raise EmptyListError("KL needs fixation and nonfixation scores")
    levels = np.unique(np.concatenate([fix, nonfix]))
    if levels.size <= bins:
        h_fix = np.bincount(np.searchsorted(levels, fix), minlength=levels.size)
        h_non = np.bincount(np.searchsorted(levels, nonfix), minlength=levels.size)
    else:
        lo, hi = levels[0], levels[-1]
        h_fix, _ = np.histogram(fix, bins=bins, range=(lo, hi))
        h_non, _ = np.histogram(nonfix, bins=bins, range=(lo, hi))
    p = h_fix + epsilon
    q = h_non + epsilon
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log2(p / q)))


def kl_fixation_based(
    model: Mapping[str, GridLike],
    trains: Sequence[FixationTrain],
    frames: Sequence[ImageFrame],
    spec: KlSpec | None = None,
    nonfixations: NonfixationSpec | None = None,
) -> float:
    """Fixation-count-weighted mean over images of the score-histogram KL."""
    spec = spec or KlSpec()
    nonfixations = nonfixations or NonfixationSpec()
    if spec.variant != "fixation-based":
        raise ValueError("kl_fixation_based needs a fixation-based KlSpec")
    by_id = {f.image_id: f for f in frames}
    rngs = _image_rngs(nonfixations, len(frames))
    total = 0.0
    count = 0
    for frame, rng in zip(frames, rngs):
        image_trains = [t for t in trains if t.image_id == frame.image_id]
        fix = fixation_scores(model[frame.image_id], frame, image_trains)
        if fix.size == 0:
            continue
        nonfix = nonfixation_scores(model[frame.image_id], frame, by_id, trains, nonfixations, rng)
        total += kl_from_scores(fix, nonfix, spec.bins, spec.epsilon) * fix.size
        count += fix.size
    if count == 0:
        raise EmptyListError("no fixations to score")
    return total / count


def kl_image_based(model: DensityGrid, reference: DensityGrid) -> float:
    """D_KL(reference || model) in bits over pixels."""
    if model.shape != reference.shape:
        raise ImageMismatchError(
            "grids have different shapes",
            model_image=model.image_id,
            reference_image=reference.image_id,
        )
    ref = reference.pmf
    support = ref > 0
    if np.any(model.pmf[support] <= 0):
        raise SupportViolationError(
            "model is zero where the reference has mass", image_id=model.image_id
        )
    r = ref[support]
    return float(np.sum(r * np.log2(r / model.pmf[support])))


def ellr_identity_check(
    p: DensityGrid, q1: DensityGrid, q2: DensityGrid
) -> tuple[float, float]:
    """Expected log-likelihood ratio of q1 over q2 under p, computed directly
    and as a difference of KL divergences."""
    support = p.pmf > 0
    if np.any(q1.pmf[support] <= 0) or np.any(q2.pmf[support] <= 0):
        raise SupportViolationError("q1 or q2 is zero where p has mass", image_id=p.image_id)
    w = p.pmf[support]
    lhs = float(np.sum(w * np.log2(q1.pmf[support] / q2.pmf[support])))
    rhs = kl_image_based(q2, p) - kl_image_based(q1, p)
    return lhs, rhs


def map_as_density(values: np.ndarray, epsilon: float, image_id: str = "") -> DensityGrid:
    """Reads a [0, 1] saliency map as a distribution over pixels."""
    return normalize_to_pmf(np.asarray(values, dtype=np.float64) + epsilon, image_id=image_id)


# --- rescaling and correlations ---


def rescale_metric(m: float, m_baseline: float, m_gold: float) -> float:
    if m_gold == m_baseline:
        raise DegenerateAnchorsError(
            "gold standard and baseline score the same", baseline=m_baseline, gold=m_gold
        )
    return (m - m_baseline) / (m_gold - m_baseline)


def metric_correlations(
    metrics: Mapping[str, Sequence[float]], info_gain: Sequence[float]
) -> dict[str, tuple[float, float]]:
    """Pearson r and Spearman rho of every metric against information gain explained."""
    gain = np.asarray(info_gain, dtype=np.float64)
    if gain.size < 3:
        raise EmptyListError("correlations need at least 3 models", n_models=int(gain.size))
    if np.ptp(gain) == 0:
        raise ConstantVectorError("information gain is identical for all models")
    out = {}
    for metric_id, values in metrics.items():
        v = np.asarray(values, dtype=np.float64)
        if v.size != gain.size:
            raise ValueError(f"metric {metric_id} has {v.size} values for {gain.size} models")
        if np.ptp(v) == 0:
            raise ConstantVectorError("metric is identical for all models", metric_id=metric_id)
        r = stats.pearsonr(v, gain)[0]
        rho = stats.spearmanr(v, gain)[0]
        out[metric_id] = (float(r), float(rho))
    return out
