import logging
from collections.abc import Iterable

import numpy as np

from infogain.models import Dataset, FixationTrain, ImageFrame, SaliencyMap

logger = logging.getLogger("infogain.validation")


def _train_label(train: FixationTrain) -> str:
    return f"train {train.subject_id}/{train.image_id}"


def validate_frames(frames: Iterable[ImageFrame]) -> list[str]:
    errors = []
    seen: set[str] = set()
    for frame in frames:
        if frame.image_id in seen:
            errors.append(f"frame {frame.image_id}: duplicate image id")
        seen.add(frame.image_id)
        if frame.width * frame.height < 4:
            errors.append(f"frame {frame.image_id}: fewer than 4 pixels")
    return errors


def validate_trains(
    trains: Iterable[FixationTrain], frames: Iterable[ImageFrame] | None = None
) -> list[str]:
    """
    Checks the per-train invariants. Coordinates and image references are only
    checked when frames are given.
    """
    by_id = {f.image_id: f for f in frames} if frames is not None else None
    errors = []
    seen: set[tuple[str, str]] = set()
    for train in trains:
        label = _train_label(train)
        key = (train.subject_id, train.image_id)
        if key in seen:
            errors.append(f"{label}: duplicate train for subject and image")
        seen.add(key)

        if not train.fixations:
            errors.append(f"{label}: empty train")
            continue

        times = [f.t for f in train.fixations]
        if any(b <= a for a, b in zip(times, times[1:])):
            errors.append(f"{label}: t not strictly increasing")

        if by_id is None:
            continue
        frame = by_id.get(train.image_id)
        if frame is None:
            errors.append(f"{label}: unknown image {train.image_id}")
            continue
        for k, fix in enumerate(train.fixations):
            if not (0 <= fix.x < frame.width and 0 <= fix.y < frame.height):
                errors.append(f"{label}: fixation {k} outside frame")
    return errors


def validate_maps(
    maps: dict[tuple[str, str], SaliencyMap], frames: Iterable[ImageFrame]
) -> list[str]:
    by_id = {f.image_id: f for f in frames}
    errors = []
    for (model_id, image_id), smap in maps.items():
        label = f"map {model_id}/{image_id}"
        if smap.image_id != image_id or smap.model_id != model_id:
            errors.append(f"{label}: key does not match map identity")
        frame = by_id.get(image_id)
        if frame is None:
            errors.append(f"{label}: unknown image {image_id}")
            continue
        if smap.values.shape != frame.shape:
            errors.append(
                f"{label}: dimension mismatch "
                f"({smap.values.shape[1]}x{smap.values.shape[0]} on "
                f"{frame.width}x{frame.height} frame)"
            )
        if not np.all(np.isfinite(smap.values)):
            errors.append(f"{label}: non-finite values")
    return errors


def validate_dataset(d: Dataset) -> list[str]:
    """
    Final consistency check of a dataset.
    Returns a list of violation messages (empty if valid).
    """
    errors = validate_frames(d.frames)
    errors += validate_trains(d.trains, d.frames)
    errors += validate_maps(d.maps, d.frames)

    if len({t.subject_id for t in d.trains}) < 2:
        errors.append("dataset: fewer than 2 subjects")
    if len(d.frames) < 2:
        errors.append("dataset: fewer than 2 images")

    if errors:
        logger.debug(f"Dataset validation found {len(errors)} violation(s)")
    return errors
