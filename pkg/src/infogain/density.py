"""
Probability-mass grids over image rasters and the primitives every model
needs: normalization, Gaussian blur, kernel density estimation and
log-likelihoods in bits per fixation.

All likelihoods are reported relative to the uniform (maximum-entropy) model
on the same raster, i.e. ``log2 p(pixel) + log2(W * H)``.
"""

import logging
from collections.abc import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from infogain.errors import (
    AllZeroError,
    DegenerateBoundsError,
    EmptyPointsError,
    ImageMismatchError,
    NegativeSigmaError,
    NegativeValueError,
    NonFiniteError,
    ZeroDensityAtFixationError,
)
from infogain.models import DensityGrid, Fixation, FixationTrain, ImageFrame, KdeSpec

logger = logging.getLogger("infogain.density")

KERNEL_TRUNCATE = 4.0


def snap_to_pixel(
    frame: ImageFrame, x: np.ndarray | float, y: np.ndarray | float
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest pixel with half-up rounding, clamped to the frame. Returns (cols, rows)."""
    cols = np.clip(np.floor(np.asarray(x, dtype=np.float64) + 0.5), 0, frame.width - 1)
    rows = np.clip(np.floor(np.asarray(y, dtype=np.float64) + 0.5), 0, frame.height - 1)
    return cols.astype(np.intp), rows.astype(np.intp)


def snap_train(frame: ImageFrame, train: FixationTrain) -> tuple[np.ndarray, np.ndarray]:
    coords = train.coordinates()
    return snap_to_pixel(frame, coords[:, 0], coords[:, 1])


def fixation_histogram(
    frame: ImageFrame, points: Iterable[Fixation] | Iterable[FixationTrain]
) -> np.ndarray:
    """Counts of snapped fixations per pixel."""
    xs: list[float] = []
    ys: list[float] = []
    for item in points:
        fixations = item.fixations if isinstance(item, FixationTrain) else [item]
        for fix in fixations:
            xs.append(fix.x)
            ys.append(fix.y)
    counts = np.zeros(frame.shape, dtype=np.float64)
    if xs:
        cols, rows = snap_to_pixel(frame, np.array(xs), np.array(ys))
        np.add.at(counts, (rows, cols), 1.0)
    return counts


def uniform_density(frame: ImageFrame) -> DensityGrid:
    return DensityGrid(
        image_id=frame.image_id,
        pmf=np.full(frame.shape, 1.0 / frame.n_pixels),
    )


def normalize_to_pmf(values: np.ndarray, image_id: str = "") -> DensityGrid:
    """Scales a nonnegative grid to unit mass."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("grid has non-finite values", image_id=image_id)
    if np.any(arr < 0):
        raise NegativeValueError("grid has negative values", image_id=image_id)
    total = arr.sum()
    if total <= 0:
        raise AllZeroError("grid has no positive mass", image_id=image_id)
    return DensityGrid(image_id=image_id, pmf=arr / total)


def kernel_radius(sigma: float, truncate: float = KERNEL_TRUNCATE) -> int:
    return int(truncate * float(sigma) + 0.5)


def gaussian_kernel1d(sigma: float, truncate: float = KERNEL_TRUNCATE) -> np.ndarray:
    """Gaussian taps on integer offsets in [-r, r], r = int(truncate*sigma + 0.5), summing to 1."""
    if sigma < 0:
        raise NegativeSigmaError("sigma must be nonnegative", sigma=sigma)
    radius = kernel_radius(sigma, truncate)
    if radius == 0:
        return np.ones(1)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    return taps / taps.sum()


def gaussian_kernel1d_dsigma(sigma: float, truncate: float = KERNEL_TRUNCATE) -> np.ndarray:
    """Derivative of `gaussian_kernel1d` taps with respect to sigma at fixed radius."""
    radius = kernel_radius(sigma, truncate)
    if radius == 0:
        return np.zeros(1)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    e = np.exp(-0.5 * (offsets / sigma) ** 2)
    de = e * offsets**2 / sigma**3
    total = e.sum()
    return (de * total - e * de.sum()) / total**2


def _separable(g: np.ndarray, taps_rows: np.ndarray, taps_cols: np.ndarray) -> np.ndarray:
    out = correlate1d(g, taps_rows, axis=0, mode="reflect")
    return correlate1d(out, taps_cols, axis=1, mode="reflect")


def gaussian_blur(g: np.ndarray, sigma: float) -> np.ndarray:
    """
    Separable Gaussian blur with reflect-at-boundary padding (half-sample
    symmetric), which conserves total mass.
    """
    if sigma < 0:
        raise NegativeSigmaError("sigma must be nonnegative", sigma=sigma)
    arr = np.asarray(g, dtype=np.float64)
    if sigma == 0:
        return arr.copy()
    taps = gaussian_kernel1d(sigma)
    return _separable(arr, taps, taps)


def gaussian_blur_dsigma(g: np.ndarray, sigma: float) -> np.ndarray:
    """d/dsigma of `gaussian_blur` (product rule over the two separable passes)."""
    arr = np.asarray(g, dtype=np.float64)
    if sigma <= 0:
        return np.zeros_like(arr)
    taps = gaussian_kernel1d(sigma)
    dtaps = gaussian_kernel1d_dsigma(sigma)
    return _separable(arr, dtaps, taps) + _separable(arr, taps, dtaps)


def _truncated_kernel_matrix(n: int, sigma: float) -> np.ndarray:
    """Column s holds the Gaussian around source pixel s, cut at the raster edge and
    at the kernel radius, renormalized to unit mass."""
    radius = kernel_radius(sigma)
    idx = np.arange(n)
    diff = (idx[:, None] - idx[None, :]).astype(np.float64)
    with np.errstate(over="ignore", under="ignore"):
        taps = np.exp(-0.5 * (diff / sigma) ** 2)
    taps[np.abs(diff) > radius] = 0.0
    return taps / taps.sum(axis=0, keepdims=True)


def kde_from_counts(counts: np.ndarray, sigma: float, image_id: str = "") -> DensityGrid:
    """Truncate-renormalize KDE of a per-pixel count grid."""
    height, width = counts.shape
    ky = _truncated_kernel_matrix(height, sigma)
    kx = _truncated_kernel_matrix(width, sigma)
    return normalize_to_pmf(ky @ counts @ kx.T, image_id=image_id)


def kde_density(
    frame: ImageFrame, points: Sequence[Fixation], spec: KdeSpec
) -> DensityGrid:
    """
    Gaussian kernel density estimate on the frame's raster. Each point's kernel
    is truncated at the frame boundary and renormalized there.
    """
    if not points:
        raise EmptyPointsError("kernel density estimate needs points", image_id=frame.image_id)
    counts = fixation_histogram(frame, points)
    return kde_from_counts(counts, spec.kernel_sigma, image_id=frame.image_id)


def _fixation_log2_values(
    model: DensityGrid, trains: Sequence[FixationTrain]
) -> np.ndarray:
    frame = model.frame
    values = []
    for train in trains:
        if train.image_id != model.image_id:
            raise ImageMismatchError(
                "train belongs to another image",
                model_image=model.image_id,
                train_image=train.image_id,
                subject_id=train.subject_id,
            )
        cols, rows = snap_train(frame, train)
        p = model.pmf[rows, cols]
        bad = np.flatnonzero(p <= 0)
        if bad.size:
            k = int(bad[0])
            raise ZeroDensityAtFixationError(
                "model has zero density at a fixation",
                image_id=train.image_id,
                subject_id=train.subject_id,
                fixation=k,
                x=train.fixations[k].x,
                y=train.fixations[k].y,
            )
        values.append(np.log2(p))
    if not values:
        raise EmptyPointsError("no fixations to evaluate", image_id=model.image_id)
    out = np.concatenate(values)
    if out.size == 0:
        raise EmptyPointsError("no fixations to evaluate", image_id=model.image_id)
    return out


def log_likelihood_bits(model: DensityGrid, trains: Sequence[FixationTrain]) -> float:
    """Mean log2-likelihood of all fixations, relative to the uniform model."""
    log2p = _fixation_log2_values(model, trains)
    return float(log2p.mean() + np.log2(model.pmf.size))


def log_likelihood_bits_per_image(
    models: Mapping[str, DensityGrid], trains: Sequence[FixationTrain]
) -> tuple[float, dict[str, tuple[float, int]]]:
    """
    Evaluates one density per image. Returns the fixation-weighted dataset value
    and per image (bits/fixation, fixation count).
    """
    by_image: dict[str, list[FixationTrain]] = {}
    for train in trains:
        by_image.setdefault(train.image_id, []).append(train)

    per_image: dict[str, tuple[float, int]] = {}
    total = 0.0
    count = 0
    for image_id in sorted(by_image):
        image_trains = by_image[image_id]
        if image_id not in models:
            raise ImageMismatchError("no density for image", image_id=image_id)
        n = sum(len(t) for t in image_trains)
        if n == 0:
            continue
        ll = log_likelihood_bits(models[image_id], image_trains)
        per_image[image_id] = (ll, n)
        total += ll * n
        count += n
    if count == 0:
        raise EmptyPointsError("no fixations to evaluate")
    return total / count, per_image


def ellr(
    model_a: DensityGrid, model_b: DensityGrid, trains: Sequence[FixationTrain]
) -> float:
    """Sample-mean expected log-likelihood ratio of a over b, in bits/fixation."""
    if model_a.image_id != model_b.image_id or model_a.shape != model_b.shape:
        raise ImageMismatchError(
            "models describe different images",
            model_a=model_a.image_id,
            model_b=model_b.image_id,
        )
    la = _fixation_log2_values(model_a, trains)
    lb = _fixation_log2_values(model_b, trains)
    return float(np.mean(la - lb))


def percent_explained(model_ll: float, baseline_ll: float, gold_ll: float) -> float:
    if gold_ll <= baseline_ll:
        raise DegenerateBoundsError(
            "gold standard does not exceed baseline",
            baseline_ll=baseline_ll,
            gold_ll=gold_ll,
        )
    return 100.0 * (model_ll - baseline_ll) / (gold_ll - baseline_ll)


def entropy_bits(pmf: np.ndarray) -> float:
    p = np.asarray(pmf, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())
