"""
SMAP binary grids: little-endian header (magic ``SMAP``, u32 version = 1,
u32 width, u32 height) followed by height x width float64 values, row-major.
"""

import logging
import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from infogain.errors import (
    BadMagicError,
    MissingMapError,
    NonFiniteError,
    TruncatedFileError,
    VersionUnsupportedError,
)
from infogain.models import ImageFrame, SaliencyMap

logger = logging.getLogger("infogain.storage.mapfile")

MAGIC = b"SMAP"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIII")
SUFFIX = ".smap"


def write_map(path: Path, grid: np.ndarray) -> Path:
    values = np.asarray(grid, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"map must be two-dimensional, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("map has non-finite values", path=str(path))
    height, width = values.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, width, height))
        f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return path


def read_map(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise TruncatedFileError("file shorter than the header", path=str(path), size=len(data))
    magic, version, width, height = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError("not a map file", path=str(path), magic=magic.decode("latin-1"))
    if version != FORMAT_VERSION:
        raise VersionUnsupportedError(
            f"unsupported map format version {version}", path=str(path), version=version
        )
    expected = HEADER.size + width * height * 8
    if len(data) < expected:
        raise TruncatedFileError(
            "file shorter than its declared grid",
            path=str(path),
            size=len(data),
            expected=expected,
        )
    values = np.frombuffer(data, dtype="<f8", count=width * height, offset=HEADER.size)
    return values.reshape(height, width).astype(np.float64)


def map_path(directory: Path, image_id: str) -> Path:
    return directory / f"{image_id}{SUFFIX}"


def load_model_maps(
    model_id: str, directory: Path, frames: Sequence[ImageFrame]
) -> dict[str, SaliencyMap]:
    """Reads `<image_id>.smap` for every frame."""
    maps = {}
    for frame in frames:
        path = map_path(directory, frame.image_id)
        if not path.exists():
            raise MissingMapError(
                "saliency map not found",
                model_id=model_id,
                image_id=frame.image_id,
                path=str(path),
            )
        maps[frame.image_id] = SaliencyMap(
            image_id=frame.image_id, model_id=model_id, values=read_map(path)
        )
    logger.debug(f"Loaded {len(maps)} map(s) for model {model_id}")
    return maps
