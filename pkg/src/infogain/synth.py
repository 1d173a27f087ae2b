"""
Ground-truth generators: fixation trains sampled from known densities and
from the self-excitation process.

Every train gets its own PCG64 generator spawned from the master seed by
train index. Each fixation consumes three uniforms: one selects the pixel,
two place the point inside it.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np

from infogain.density import fixation_histogram, gaussian_blur, normalize_to_pmf
from infogain.models import (
    DensityGrid,
    Fixation,
    FixationTrain,
    ImageFrame,
    SynthConfig,
    TemporalParams,
)
from infogain.temporal import conditional_density

logger = logging.getLogger("infogain.synth")

GENERATOR = "PCG64"
FIXATION_INTERVAL = 0.25

SeedLike = int | np.random.SeedSequence


def _children(seed: SeedLike, n: int) -> list[np.random.SeedSequence]:
    if isinstance(seed, np.random.SeedSequence):
        # fresh copy: spawn() advances the counter of the instance it is called on
        root = np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size
        )
    else:
        root = np.random.SeedSequence(seed)
    return root.spawn(n)


def _rng(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(ss))


def subject_label(index: int) -> str:
    return f"s{index:03d}"


def _place(frame: ImageFrame, pixel: np.ndarray, jitter: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Uniform point inside the part of the pixel that lies in the frame;
    snapping the result gives the pixel back.
    """
    row, col = np.divmod(pixel, frame.width)
    x_lo = np.maximum(col - 0.5, 0.0)
    y_lo = np.maximum(row - 0.5, 0.0)
    x = x_lo + jitter[..., 0] * (col + 0.5 - x_lo)
    y = y_lo + jitter[..., 1] * (row + 0.5 - y_lo)
    return x, y


def _draw_pixels(pmf: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(pmf.ravel())
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1)


def sample_spatial(
    frame: ImageFrame,
    pmf: DensityGrid,
    n_subjects: int,
    fixations_per_subject: int,
    seed: SeedLike,
) -> list[FixationTrain]:
    """I.i.d. fixations from `pmf`, one train per subject."""
    if n_subjects < 1 or fixations_per_subject < 1:
        raise ValueError("subject and fixation counts must be at least 1")
    trains = []
    for j, ss in enumerate(_children(seed, n_subjects)):
        draws = _rng(ss).random((fixations_per_subject, 3))
        pixels = _draw_pixels(pmf.pmf, draws[:, 0])
        x, y = _place(frame, pixels, draws[:, 1:])
        fixations = [
            Fixation(x=float(x[k]), y=float(y[k]), t=k * FIXATION_INTERVAL)
            for k in range(fixations_per_subject)
        ]
        trains.append(
            FixationTrain(image_id=frame.image_id, subject_id=subject_label(j), fixations=fixations)
        )
    return trains


def sample_temporal(
    frame: ImageFrame,
    base: DensityGrid,
    p: TemporalParams,
    length: int,
    seed: SeedLike,
    subject: int = 0,
) -> FixationTrain:
    """
    One train from the self-excitation process. With delta = 0 this draws
    exactly the first train `sample_spatial` would draw from the same seed.
    """
    if length < 1:
        raise ValueError("train length must be at least 1")
    rng = _rng(_children(seed, subject + 1)[subject])
    fixations: list[Fixation] = []
    density = base
    for k in range(length):
        draws = rng.random(3)
        pixel = _draw_pixels(density.pmf, draws[:1])
        x, y = _place(frame, pixel, draws[None, 1:])
        fix = Fixation(x=float(x[0]), y=float(y[0]), t=k * FIXATION_INTERVAL)
        fixations.append(fix)
        density = conditional_density(base, fix, p)
    return FixationTrain(
        image_id=frame.image_id, subject_id=subject_label(subject), fixations=fixations
    )


def centre_prior(frame: ImageFrame, center_ratio: float) -> np.ndarray:
    """Radial Gaussian falloff whose centre:corner density ratio is `center_ratio`."""
    xc = (frame.width - 1) / 2.0
    yc = (frame.height - 1) / 2.0
    dx2 = ((np.arange(frame.width) - xc) ** 2)[None, :]
    dy2 = ((np.arange(frame.height) - yc) ** 2)[:, None]
    d2 = (dx2 + dy2) / max(xc**2 + yc**2, 1e-12)
    return np.exp(-math.log(center_ratio) * d2)


def generator_density(
    frame: ImageFrame, rng: np.random.Generator, center_ratio: float, n_blobs: int
) -> DensityGrid:
    """Centre-biased prior times a few Gaussian blobs of image content."""
    content = np.full(frame.shape, 0.2)
    scale = min(frame.width, frame.height)
    for _ in range(n_blobs):
        bump = np.zeros(frame.shape)
        row = int(rng.integers(0, frame.height))
        col = int(rng.integers(0, frame.width))
        bump[row, col] = 1.0
        sigma = float(rng.uniform(scale / 16.0, scale / 6.0))
        bump = gaussian_blur(bump, sigma)
        content += float(rng.uniform(0.5, 1.5)) * bump / bump.max()
    return normalize_to_pmf(centre_prior(frame, center_ratio) * content, image_id=frame.image_id)


def synthesize(
    cfg: SynthConfig,
) -> tuple[list[ImageFrame], list[FixationTrain], dict[str, DensityGrid]]:
    """Frames, fixation trains and the generating density of every image."""
    layout_ss, *image_ss = _children(cfg.seed, cfg.n_images + 1)
    layout = _rng(layout_ss)
    frames: list[ImageFrame] = []
    trains: list[FixationTrain] = []
    densities: dict[str, DensityGrid] = {}
    for i, ss in enumerate(image_ss):
        frame = ImageFrame(image_id=f"img{i:03d}", width=cfg.width, height=cfg.height)
        pmf = generator_density(frame, layout, cfg.center_ratio, cfg.n_blobs)
        frames.append(frame)
        densities[frame.image_id] = pmf
        if cfg.temporal is None:
            trains += sample_spatial(frame, pmf, cfg.n_subjects, cfg.fixations_per_subject, ss)
        else:
            trains += [
                sample_temporal(frame, pmf, cfg.temporal, cfg.fixations_per_subject, ss, subject=j)
                for j in range(cfg.n_subjects)
            ]
    logger.info(
        f"Synthesized {len(frames)} image(s), {len(trains)} train(s), "
        f"{sum(len(t) for t in trains)} fixation(s)"
    )
    return frames, trains, densities


def empirical_frequencies(trains: Sequence[FixationTrain], frame: ImageFrame) -> np.ndarray:
    """Relative frequency of fixations per pixel."""
    counts = fixation_histogram(frame, trains)
    return counts / counts.sum()
