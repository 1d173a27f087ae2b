import csv
import hashlib
import json
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from infogain.storage.mapfile import write_map
from infogain.synth import GENERATOR
from infogain.utils import get_app_version

logger = logging.getLogger("infogain.workspace")

TOOL = "infogain"


def config_hash(config: BaseModel | dict[str, Any] | None) -> str:
    """sha256 of the canonical JSON form of a configuration."""
    if config is None:
        data: Any = {}
    elif isinstance(config, BaseModel):
        data = config.model_dump(mode="json")
    else:
        data = config
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _plain(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


class RunWorkspace:
    """Output directory of one run. Every file it writes carries the run metadata."""

    def __init__(
        self,
        output_dir: Path,
        config: BaseModel | dict[str, Any] | None = None,
        seed: int = 0,
    ):
        self.base_path = Path(output_dir)
        self.config_hash = config_hash(config)
        self.seed = seed
        self.base_path.mkdir(parents=True, exist_ok=True)

    @property
    def log_file(self) -> Path:
        return self.base_path / "run.log"

    def path(self, name: str) -> Path:
        target = Path(name)
        if not target.is_absolute():
            target = self.base_path / name
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def metadata(self, **extra: Any) -> dict[str, Any]:
        meta = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "generator": GENERATOR,
            "tool": TOOL,
            "version": get_app_version(),
        }
        meta.update({k: _plain(v) for k, v in extra.items()})
        return meta

    def save_json(self, name: str, data: BaseModel | dict[str, Any], **meta: Any) -> Path:
        """Writes a JSON document with an embedded "metadata" object."""
        payload = _plain(data)
        payload["metadata"] = self.metadata(**meta)
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, ensure_ascii=False)
            f.write("\n")
        logger.debug(f"Wrote {target}")
        return target

    def load_json(self, name: str) -> dict[str, Any]:
        with open(self.path(name), encoding="utf-8") as f:
            return json.load(f)

    def save_csv(
        self,
        name: str,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
        **meta: Any,
    ) -> Path:
        """Writes a CSV table plus a `<name>.meta.json` sidecar."""
        target = self.path(name)
        with open(target, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        sidecar = target.with_name(target.name.removesuffix(".csv") + ".meta.json")
        with open(sidecar, "w", encoding="utf-8") as f:
            json.dump({"metadata": self.metadata(table=target.name, **meta)}, f, indent=2)
            f.write("\n")
        logger.debug(f"Wrote {target}")
        return target

    def save_map(self, name: str, grid: np.ndarray) -> Path:
        return write_map(self.path(name), grid)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    return str(value)
