"""
Reference models: the maximum-entropy model, the cross-image histogram lower
bound and the leave-one-subject-out gold standard.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np

from infogain.density import (
    fixation_histogram,
    kde_from_counts,
    log_likelihood_bits_per_image,
    snap_train,
    uniform_density,
)
from infogain.errors import (
    EmptyGridsError,
    EmptyPointsError,
    MissingGridError,
    SingleImageError,
    TooFewSubjectsError,
    ZeroDensityAtFixationError,
)
from infogain.models import (
    Dataset,
    DensityGrid,
    FixationTrain,
    GoldStandard,
    HistogramBaseline,
    ImageFrame,
)

logger = logging.getLogger("infogain.baselines")

BinSpec = int | tuple[int, int]


# --- histogram lower bound ---


def _pixel_bins(n_pixels: int, n_bins: int) -> np.ndarray:
    """Bin index of every pixel along one axis, in normalized image coordinates."""
    centres = (np.arange(n_pixels) + 0.5) * n_bins / n_pixels
    return np.minimum(np.floor(centres).astype(np.intp), n_bins - 1)


def _image_bin_counts(
    frame: ImageFrame, trains: Sequence[FixationTrain], bins_x: int, bins_y: int
) -> np.ndarray:
    counts = np.zeros((bins_y, bins_x))
    col_bins = _pixel_bins(frame.width, bins_x)
    row_bins = _pixel_bins(frame.height, bins_y)
    for train in trains:
        cols, rows = snap_train(frame, train)
        np.add.at(counts, (row_bins[rows], col_bins[cols]), 1.0)
    return counts


def histogram_density(
    baseline: HistogramBaseline, frame: ImageFrame, exclude_image: str | None = None
) -> DensityGrid:
    """
    Upsampled, regularized histogram density on `frame`'s raster.

    Bin counts of every image except `exclude_image` are pooled; each bin's
    mass is spread equally over the pixels it covers, and the result is mixed
    with the uniform density as (1 - lam) * h + lam * u.
    """
    counts = sum(
        (c for image_id, c in baseline.counts.items() if image_id != exclude_image),
        start=np.zeros((baseline.bins_y, baseline.bins_x)),
    )
    uniform = np.full(frame.shape, 1.0 / frame.n_pixels)
    total = counts.sum()
    if total <= 0 or baseline.lam >= 1.0:
        return DensityGrid(image_id=frame.image_id, pmf=uniform)

    col_bins = _pixel_bins(frame.width, baseline.bins_x)
    row_bins = _pixel_bins(frame.height, baseline.bins_y)
    px_per_col_bin = np.bincount(col_bins, minlength=baseline.bins_x)
    px_per_row_bin = np.bincount(row_bins, minlength=baseline.bins_y)

    bin_pmf = counts / total
    area = np.outer(px_per_row_bin, px_per_col_bin).astype(np.float64)
    per_pixel = np.divide(bin_pmf, area, out=np.zeros_like(bin_pmf), where=area > 0)
    hist = per_pixel[np.ix_(row_bins, col_bins)]
    # bins narrower than a pixel cover nothing on small rasters
    if hist.sum() <= 0:
        return DensityGrid(image_id=frame.image_id, pmf=uniform)
    hist /= hist.sum()
    pmf = (1.0 - baseline.lam) * hist + baseline.lam * uniform
    return DensityGrid(image_id=frame.image_id, pmf=pmf / pmf.sum())


def _heldout_sum(baseline: HistogramBaseline, d: Dataset) -> tuple[float, int]:
    """Summed leave-one-image-out log2-likelihood (relative to uniform) and count."""
    total = 0.0
    count = 0
    for frame in d.frames:
        trains = d.trains_for_image(frame.image_id)
        n = sum(len(t) for t in trains)
        if n == 0:
            continue
        pmf = histogram_density(baseline, frame, exclude_image=frame.image_id).pmf
        for train in trains:
            cols, rows = snap_train(frame, train)
            p = pmf[rows, cols]
            if np.any(p <= 0):
                return -math.inf, count + n
            total += float(np.log2(p).sum())
        total += n * math.log2(frame.n_pixels)
        count += n
    return total, count


def _as_bin_pair(spec: BinSpec) -> tuple[int, int]:
    if isinstance(spec, int):
        return spec, spec
    bx, by = spec
    return int(bx), int(by)


def fit_histogram_baseline(
    d: Dataset, bin_grid: Sequence[BinSpec], lambda_grid: Sequence[float]
) -> HistogramBaseline:
    """
    Grid search over (bins, lambda) by leave-one-image-out predictive
    log-likelihood. Entries of `bin_grid` are bins per axis or (bins_x, bins_y)
    pairs. Ties keep the earliest candidate.
    """
    if len(d.frames) < 2:
        raise SingleImageError(
            "histogram baseline needs at least 2 images", n_images=len(d.frames)
        )
    if not bin_grid or not lambda_grid:
        raise EmptyGridsError(
            "bin and lambda grids must be non-empty",
            n_bins=len(bin_grid),
            n_lambdas=len(lambda_grid),
        )

    best: HistogramBaseline | None = None
    candidates: list[tuple[int, int, float, float]] = []
    for spec in bin_grid:
        bins_x, bins_y = _as_bin_pair(spec)
        counts = {
            f.image_id: _image_bin_counts(
                f, d.trains_for_image(f.image_id), bins_x, bins_y
            )
            for f in d.frames
        }
        for lam in lambda_grid:
            candidate = HistogramBaseline(
                bins_x=bins_x, bins_y=bins_y, lam=lam, counts=counts
            )
            total, count = _heldout_sum(candidate, d)
            if count == 0:
                raise EmptyPointsError("dataset has no fixations")
            ll = total / count
            candidates.append((bins_x, bins_y, float(lam), ll))
            logger.debug(f"Histogram candidate {bins_x}x{bins_y} lambda={lam}: {ll:.4f} bits/fix")
            if best is None or ll > best.heldout_ll:  # type: ignore[operator]
                best = candidate.model_copy(update={"heldout_ll": ll})

    assert best is not None
    logger.info(
        f"Histogram baseline: {best.bins_x}x{best.bins_y} bins, lambda={best.lam}, "
        f"held-out {best.heldout_ll:.4f} bits/fix"
    )
    return best.model_copy(update={"candidates": candidates})


def histogram_baseline_densities(
    baseline: HistogramBaseline, d: Dataset
) -> dict[str, DensityGrid]:
    """Leave-one-image-out baseline density of every image."""
    return {
        f.image_id: histogram_density(baseline, f, exclude_image=f.image_id)
        for f in d.frames
    }


def histogram_baseline_ll(baseline: HistogramBaseline, d: Dataset) -> float:
    """Cross-validated bits/fixation of the lower-bound model."""
    ll, _ = log_likelihood_bits_per_image(histogram_baseline_densities(baseline, d), d.trains)
    return ll


# --- gold standard ---


def assign_folds(subjects: Sequence[str], folds: int, seed: int) -> dict[str, int]:
    """Subjects sorted, shuffled with `seed`, then dealt round-robin into folds."""
    ordered = sorted(subjects)
    order = np.random.default_rng(seed).permutation(len(ordered))
    return {ordered[idx]: k % folds for k, idx in enumerate(order)}


class _ImageCounts:
    """Per-subject snapped fixations of one image."""

    def __init__(self, frame: ImageFrame, trains: Sequence[FixationTrain]):
        self.frame = frame
        self.counts: dict[str, np.ndarray] = {}
        self.pixels: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for train in trains:
            self.counts[train.subject_id] = fixation_histogram(frame, [train])
            self.pixels[train.subject_id] = snap_train(frame, train)

    def pooled(self, subjects: Sequence[str]) -> np.ndarray:
        out = np.zeros(self.frame.shape)
        for s in subjects:
            out += self.counts[s]
        return out


def _kde_or_uniform(frame: ImageFrame, counts: np.ndarray, sigma: float) -> DensityGrid:
    if counts.sum() <= 0:
        return uniform_density(frame)
    return kde_from_counts(counts, sigma, image_id=frame.image_id)


def gold_cv_scores(
    d: Dataset, sigma_grid: Sequence[float], folds: int, seed: int = 0
) -> list[tuple[float, float]]:
    """
    Held-out bits/fixation of every sigma under subject-wise k-fold
    cross-validation. A sigma that leaves a held-out fixation at zero density
    scores -inf.
    """
    subjects = d.subjects()
    fold_of = assign_folds(subjects, folds, seed)
    images = [_ImageCounts(f, d.trains_for_image(f.image_id)) for f in d.frames]
    n_total = d.fixation_count()

    scores = []
    for sigma in sorted(sigma_grid):
        total = 0.0
        for image, k in ((image, k) for image in images for k in range(folds)):
            total += _fold_log2_sum(image, fold_of, k, sigma)
            if total == -math.inf:
                break
        ll = total / n_total
        logger.debug(f"Gold standard sigma={sigma:.3f}: {ll:.4f} bits/fix")
        scores.append((float(sigma), ll))
    return scores


def _fold_log2_sum(
    image: _ImageCounts, fold_of: dict[str, int], k: int, sigma: float
) -> float:
    test = [s for s in image.counts if fold_of[s] == k]
    if not test:
        return 0.0
    train = [s for s in image.counts if fold_of[s] != k]
    pmf = _kde_or_uniform(image.frame, image.pooled(train), sigma).pmf
    log_n = math.log2(image.frame.n_pixels)
    total = 0.0
    for s in test:
        cols, rows = image.pixels[s]
        p = pmf[rows, cols]
        if np.any(p <= 0):
            return -math.inf
        total += float(np.log2(p).sum()) + len(p) * log_n
    return total


def fit_gold_standard(
    d: Dataset, sigma_grid: Sequence[float], folds: int, seed: int = 0
) -> GoldStandard:
    """
    Selects one kernel width by subject-wise cross-validation, then builds the
    leave-one-subject-out density of every (image, subject) pair and the
    all-subjects density of every image.
    """
    subjects = d.subjects()
    if len(subjects) < 2:
        raise TooFewSubjectsError(
            "gold standard needs at least 2 subjects", n_subjects=len(subjects)
        )
    if not sigma_grid:
        raise EmptyGridsError("sigma grid must be non-empty")
    if d.fixation_count() == 0:
        raise EmptyPointsError("dataset has no fixations")
    if folds > len(subjects):
        logger.warning(f"Reducing folds from {folds} to {len(subjects)} (one per subject)")
        folds = len(subjects)
    folds = max(folds, 2)

    scores = gold_cv_scores(d, sigma_grid, folds, seed)
    # ascending grid, strict improvement: ties keep the smaller sigma
    sigma, best_ll = scores[0]
    for s, ll in scores[1:]:
        if ll > best_ll:
            sigma, best_ll = s, ll
    if best_ll == -math.inf:
        raise ZeroDensityAtFixationError(
            "no kernel width gives positive density at every held-out fixation",
            sigmas=[s for s, _ in scores],
        )
    logger.info(f"Gold standard: sigma={sigma:.3f} px, cross-validated {best_ll:.4f} bits/fix")

    loso: dict[tuple[str, str], DensityGrid] = {}
    full: dict[str, DensityGrid] = {}
    for frame in d.frames:
        image = _ImageCounts(frame, d.trains_for_image(frame.image_id))
        everyone = list(image.counts)
        if everyone:
            full[frame.image_id] = _kde_or_uniform(frame, image.pooled(everyone), sigma)
        for subject in everyone:
            others = [s for s in everyone if s != subject]
            if not others:
                logger.warning(
                    f"Image {frame.image_id} has only subject {subject}; using uniform density"
                )
            loso[(frame.image_id, subject)] = _kde_or_uniform(
                frame, image.pooled(others), sigma
            )

    return GoldStandard(
        kernel_sigma=sigma, folds=folds, seed=seed, loso=loso, full=full, cv_scores=scores
    )


def _gold_values(
    g: GoldStandard, d: Dataset, estimator: str
) -> dict[tuple[str, str], np.ndarray]:
    """Per train: log2 p_gold + log2(W*H) at each fixation."""
    out = {}
    for train in d.trains:
        if not train.fixations:
            continue
        if estimator == "loso":
            grid = g.loso_density(train.image_id, train.subject_id)
        elif estimator == "in_sample":
            grid = g.full_density(train.image_id)
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        frame = d.frame(train.image_id)
        cols, rows = snap_train(frame, train)
        p = grid.pmf[rows, cols]
        bad = np.flatnonzero(p <= 0)
        if bad.size:
            raise ZeroDensityAtFixationError(
                "gold standard has zero density at a fixation",
                image_id=train.image_id,
                subject_id=train.subject_id,
                fixation=int(bad[0]),
            )
        out[(train.image_id, train.subject_id)] = np.log2(p) + math.log2(frame.n_pixels)
    return out


def gold_standard_ll(g: GoldStandard, d: Dataset, estimator: str = "loso") -> float:
    """
    Subject-balanced gold-standard estimate: for every subject the mean over
    their fixations, then the mean over subjects.
    """
    values = _gold_values(g, d, estimator)
    per_subject: dict[str, list[np.ndarray]] = {}
    for (_, subject), v in values.items():
        per_subject.setdefault(subject, []).append(v)
    if not per_subject:
        raise MissingGridError("no fixations to evaluate against the gold standard")
    means = [float(np.concatenate(per_subject[s]).mean()) for s in sorted(per_subject)]
    return float(np.mean(means))


def gold_standard_ll_per_image(
    g: GoldStandard, d: Dataset, estimator: str = "loso"
) -> dict[str, tuple[float, int]]:
    """Per image: sample-mean gold bits/fixation over that image's fixations, and count."""
    values = _gold_values(g, d, estimator)
    per_image: dict[str, list[np.ndarray]] = {}
    for (image_id, _), v in values.items():
        per_image.setdefault(image_id, []).append(v)
    out = {}
    for image_id in sorted(per_image):
        v = np.concatenate(per_image[image_id])
        out[image_id] = (float(v.mean()), int(v.size))
    return out
