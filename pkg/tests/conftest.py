"""
Global pytest fixtures for infogain tests.

Slow acceptance runs are marked `slow` and skipped by default:
    pytest -m ""        # everything
    pytest -m slow      # acceptance runs only
"""

from collections.abc import Callable, Sequence

import numpy as np
import pytest

from infogain.models import (
    Dataset,
    Fixation,
    FixationTrain,
    ImageFrame,
    SaliencyMap,
    SynthConfig,
)
from infogain.synth import synthesize

TrainFactory = Callable[..., FixationTrain]


@pytest.fixture
def make_train() -> TrainFactory:
    """Builds a train from (x, y) pairs with times 0.1, 0.2, ..."""

    def _make(
        image_id: str, subject_id: str, points: Sequence[tuple[float, float]]
    ) -> FixationTrain:
        return FixationTrain(
            image_id=image_id,
            subject_id=subject_id,
            fixations=[
                Fixation(x=float(x), y=float(y), t=0.1 * (k + 1))
                for k, (x, y) in enumerate(points)
            ],
        )

    return _make


@pytest.fixture
def frame4() -> ImageFrame:
    return ImageFrame(image_id="img", width=4, height=4)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_synth() -> Callable[..., Dataset]:
    """Synthetic dataset; `maps` adds the generator density as model "generator"."""

    def _build(maps: bool = True, **overrides) -> Dataset:
        params = {
            "n_images": 3,
            "width": 24,
            "height": 20,
            "n_subjects": 4,
            "fixations_per_subject": 15,
            "seed": 7,
        }
        params.update(overrides)
        frames, trains, densities = synthesize(SynthConfig(**params))
        smaps = {}
        if maps:
            smaps = {
                ("generator", f.image_id): SaliencyMap(
                    image_id=f.image_id, model_id="generator", values=densities[f.image_id].pmf
                )
                for f in frames
            }
        return Dataset(frames=frames, trains=trains, maps=smaps)

    return _build
