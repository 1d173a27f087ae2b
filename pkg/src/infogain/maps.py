"""
Per-pixel diagnostics: image-based saliency (ratio to the prior),
information-gain maps, difference-to-gold maps and the per-image scatter of
possible versus explained information gain.

Map sums are gold-weighted integrals; the per-image scalars of the scatter use
the sample-mean estimator over each image's fixations.
"""

import logging
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from infogain.density import percent_explained
from infogain.errors import ImageMismatchError, SupportViolationError, ZeroPriorError
from infogain.models import DensityGrid, InfoGainMap, ScatterPoint

logger = logging.getLogger("infogain.maps")


def _same_shape(*grids: DensityGrid) -> None:
    shapes = {g.shape for g in grids}
    if len(shapes) > 1:
        raise ImageMismatchError(
            "grids have different shapes", images=[g.image_id for g in grids]
        )


def ratio_map(model: DensityGrid, prior: DensityGrid) -> np.ndarray:
    _same_shape(model, prior)
    if np.any(prior.pmf <= 0):
        raise ZeroPriorError("prior has zero mass at some pixel", image_id=prior.image_id)
    return model.pmf / prior.pmf


def _weighted_log_ratio(weights: DensityGrid, num: DensityGrid, den: DensityGrid) -> np.ndarray:
    _same_shape(weights, num, den)
    support = weights.pmf > 0
    if np.any(num.pmf[support] <= 0) or np.any(den.pmf[support] <= 0):
        raise SupportViolationError(
            "density is zero where the gold standard has mass", image_id=weights.image_id
        )
    out = np.zeros(weights.shape)
    out[support] = weights.pmf[support] * np.log2(num.pmf[support] / den.pmf[support])
    return out


def info_gain_map(gold: DensityGrid, model: DensityGrid, prior: DensityGrid) -> InfoGainMap:
    """gold * log2(model / prior); sums to the gold-weighted gain of model over prior."""
    return InfoGainMap(
        image_id=gold.image_id, kind="info_gain", grid=_weighted_log_ratio(gold, model, prior)
    )


def info_gain_diff_map(gold: DensityGrid, model: DensityGrid, prior: DensityGrid) -> InfoGainMap:
    """gold * log2(model / gold); sums to minus the image-based KL of model from gold."""
    _same_shape(gold, model, prior)
    return InfoGainMap(
        image_id=gold.image_id, kind="diff", grid=_weighted_log_ratio(gold, model, gold)
    )


def possible_gain_map(gold: DensityGrid, prior: DensityGrid) -> InfoGainMap:
    return InfoGainMap(
        image_id=gold.image_id, kind="possible_gain", grid=_weighted_log_ratio(gold, gold, prior)
    )


def scatter_data(
    gold_ll: Mapping[str, float],
    baseline_ll: Mapping[str, float],
    model_ll: Mapping[str, float],
) -> list[ScatterPoint]:
    """
    One point per image: possible gain (gold - baseline) and the percentage
    of it the model explains. Percentages are not clamped; images without
    possible gain get no percentage and a flag.
    """
    points = []
    for image_id in sorted(gold_ll):
        possible = gold_ll[image_id] - baseline_ll[image_id]
        flags: list[str] = []
        explained: float | None = None
        if possible <= 0:
            flags.append("no_possible_gain")
        else:
            explained = percent_explained(
                model_ll[image_id], baseline_ll[image_id], gold_ll[image_id]
            )
            if explained < 0:
                flags.append("below_baseline")
            elif explained > 100:
                flags.append("above_gold")
        points.append(
            ScatterPoint(image_id=image_id, possible_gain=possible, explained=explained, flags=flags)
        )
    flagged = sum(1 for p in points if p.flags)
    if flagged:
        logger.info(f"{flagged} of {len(points)} image(s) flagged in scatter data")
    return points


def render_png(grid: np.ndarray, path: Path, vmax: float | None = None) -> Path:
    """
    8-bit PNG with a diverging colour scale symmetric about zero
    (blue negative, red positive). Needs the optional matplotlib extra.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise ImportError(
            "PNG rendering needs matplotlib; install saliency-infogain[plot]"
        ) from e

    values = np.asarray(grid, dtype=np.float64)
    limit = vmax if vmax is not None else float(np.max(np.abs(values)))
    if limit <= 0:
        limit = 1.0
    plt.imsave(path, values, cmap="RdBu_r", vmin=-limit, vmax=limit)
    return path
