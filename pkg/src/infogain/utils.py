import logging
import sys
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import TypeVar

logger = logging.getLogger("infogain.utils")

T = TypeVar("T")
R = TypeVar("R")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def get_app_version() -> str:
    """Reads the version from the VERSION file or package metadata."""
    version_file = Path(__file__).parent / "VERSION"
    try:
        return version_file.read_text(encoding="utf-8").strip()
    except OSError:
        pass
    try:
        from importlib.metadata import version

        return version("saliency-infogain")
    except Exception:
        return "0.0.0"


def setup_logging(level: int = logging.INFO, log_file: Path | None = None):
    """Configures global logging. Console output goes to stderr so stdout
    stays machine-readable; `log_file` adds a persistent copy."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]

    if log_file is not None:
        try:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            handlers.append(file_handler)
        except OSError as e:
            print(f"Warning: Could not setup file logging: {e}", file=sys.stderr)

    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%H:%M:%S", handlers=handlers, force=True)
    # Suppress noisy debug logs from heavy libraries
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """Applies `fn` to every item with up to `jobs` threads; results keep input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
