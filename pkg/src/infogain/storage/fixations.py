import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

from pydantic import ValidationError

from infogain.errors import MalformedHeaderError, MalformedRowError, ValidationFailedError
from infogain.models import Fixation, FixationTrain, ImageFrame
from infogain.validation import validate_frames, validate_trains

logger = logging.getLogger("infogain.storage.fixations")

FIXATIONS_HEADER = ["image_id", "subject_id", "x", "y", "t"]
FRAMES_HEADER = ["image_id", "width", "height"]


def _check_header(path: Path, header: list[str] | None, expected: list[str]) -> None:
    if header != expected:
        raise MalformedHeaderError(
            f"expected header {','.join(expected)}",
            path=str(path),
            found=",".join(header) if header else "",
        )


def parse_fixations_csv(
    path: Path, frames: Sequence[ImageFrame] | None = None
) -> list[FixationTrain]:
    """
    Reads `image_id,subject_id,x,y,t` rows into trains, grouped by
    (image_id, subject_id) in order of first appearance; fixations keep their
    file order. Raises ValidationFailedError listing every violation.
    """
    groups: dict[tuple[str, str], list[Fixation]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        _check_header(path, next(reader, None), FIXATIONS_HEADER)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(FIXATIONS_HEADER):
                raise MalformedRowError(
                    f"expected {len(FIXATIONS_HEADER)} fields, got {len(row)}",
                    path=str(path),
                    line=line,
                )
            image_id, subject_id, x, y, t = row
            try:
                fix = Fixation(x=float(x), y=float(y), t=float(t))
            except (ValueError, ValidationError) as e:
                raise MalformedRowError(
                    f"bad coordinate or time: {e}", path=str(path), line=line
                ) from None
            groups.setdefault((image_id, subject_id), []).append(fix)

    trains = [
        FixationTrain(image_id=image_id, subject_id=subject_id, fixations=fixations)
        for (image_id, subject_id), fixations in groups.items()
    ]
    violations = validate_trains(trains, frames)
    if violations:
        raise ValidationFailedError(
            f"{len(violations)} violation(s) in {path.name}", path=str(path), violations=violations
        )
    logger.info(f"Read {len(trains)} train(s) from {path}")
    return trains


def write_fixations_csv(path: Path, trains: Iterable[FixationTrain]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(FIXATIONS_HEADER)
        for train in trains:
            for fix in train.fixations:
                writer.writerow(
                    [train.image_id, train.subject_id, repr(fix.x), repr(fix.y), repr(fix.t)]
                )
    return path


def parse_frames_csv(path: Path) -> list[ImageFrame]:
    """Reads `image_id,width,height` rows."""
    frames = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        _check_header(path, next(reader, None), FRAMES_HEADER)
        for row in reader:
            if not row:
                continue
            try:
                image_id, width, height = row
                frames.append(ImageFrame(image_id=image_id, width=int(width), height=int(height)))
            except (ValueError, ValidationError) as e:
                raise MalformedRowError(
                    f"bad frame row: {e}", path=str(path), line=reader.line_num
                ) from None
    violations = validate_frames(frames)
    if violations:
        raise ValidationFailedError(
            f"{len(violations)} violation(s) in {path.name}", path=str(path), violations=violations
        )
    return frames


def write_frames_csv(path: Path, frames: Iterable[ImageFrame]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(FRAMES_HEADER)
        for frame in frames:
            writer.writerow([frame.image_id, frame.width, frame.height])
    return path
