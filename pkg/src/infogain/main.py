import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from infogain.errors import ConfigError, InfogainError
from infogain.models import SynthConfig
from infogain.utils import get_app_version, setup_logging

logger = logging.getLogger("infogain.main")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infogain",
        description="Saliency models as point processes, evaluated in bits per fixation",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Enable verbose (DEBUG) logging"
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="Only show ERROR logs")
    parser.add_argument(
        "--version",
        action="version",
        version=f"infogain {get_app_version()}",
        help="Show version number and exit",
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="Run configuration (JSON or YAML)")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--out", type=Path, default=None, help="Override the output directory")
    common.add_argument(
        "--jobs", type=int, default=None, help="Models/images processed in parallel"
    )
    common.add_argument(
        "--max-iter", type=int, default=None, help="Override the optimizer iteration limit"
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="Check dataset and maps")

    p = sub.add_parser("baseline", parents=[common], help="Fit a baseline model")
    p.add_argument("which", choices=["histogram", "gold"])

    p = sub.add_parser("calibrate", parents=[common], help="Calibrate one saliency model")
    p.add_argument("--model", required=True)
    p.add_argument("--stage", choices=["nonlin", "cb", "blur"], default="blur")

    sub.add_parser("eval", parents=[common], help="Bits/fixation table for all models")

    p = sub.add_parser("maps", parents=[common], help="Per-pixel information gain maps")
    p.add_argument("--model", required=True)
    p.add_argument("--images", nargs="+", default=None)
    p.add_argument("--png", action="store_true", help="Also render PNGs (needs matplotlib)")

    sub.add_parser("metrics", parents=[common], help="AUC/KL metrics and their correlations")

    p = sub.add_parser("temporal", parents=[common], help="Fit the temporal extension")
    p.add_argument("--model", required=True, help='Model id, or "baseline" for the histogram')

    p = sub.add_parser("synth", help="Generate a synthetic dataset")
    p.add_argument("kind", choices=["spatial", "temporal"])
    p.add_argument("params", type=Path, nargs="?", default=None, help="SynthConfig (JSON or YAML)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)
    return parser


def load_synth_config(path: Path | None, seed: int | None, out: Path | None) -> SynthConfig:
    data: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError("synth parameters must be a JSON object", path=str(path))
        if "output_dir" in data and not Path(data["output_dir"]).is_absolute():
            data["output_dir"] = str(path.parent / data["output_dir"])
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = str(out)
    return SynthConfig.model_validate(data)


def _emit(result: Any) -> None:
    json.dump(result, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")


def _error_payload(e: Exception) -> dict[str, Any]:
    if isinstance(e, InfogainError):
        return e.to_dict()
    if isinstance(e, ValidationError):
        return {
            "error": "ValidationError",
            "message": f"{e.error_count()} validation error(s)",
            "details": {"errors": json.loads(e.json())},
        }
    return {"error": type(e).__name__, "message": str(e), "details": {}}


def run(args: argparse.Namespace, log_level: int) -> int:
    # heavy numerics are imported only once arguments are known
    from infogain import pipelines
    from infogain.workspace import RunWorkspace

    if args.command == "synth":
        synth_cfg = load_synth_config(args.params, args.seed, args.out)
        setup_logging(level=log_level, log_file=Path(synth_cfg.output_dir) / "run.log")
        _emit(pipelines.run_synth(synth_cfg, args.kind))
        return EXIT_OK

    cfg = pipelines.load_config(
        args.config,
        seed=args.seed,
        output_dir=args.out,
        jobs=args.jobs,
        max_iter=args.max_iter,
    )
    if args.command == "validate":
        violations = pipelines.run_validate(cfg)
        _emit({"valid": not violations, "violations": violations})
        return EXIT_INVALID if violations else EXIT_OK

    ws = RunWorkspace(
        cfg.output_dir, cfg.model_dump(mode="json", exclude={"output_dir"}), cfg.seed
    )
    setup_logging(level=log_level, log_file=ws.log_file)
    logger.info(f"Command {args.command}, output in {ws.base_path}")

    if args.command == "baseline":
        result = pipelines.run_baselines(cfg, ws, args.which)
    elif args.command == "calibrate":
        result = pipelines.run_calibrate(cfg, ws, args.model, args.stage)
    elif args.command == "eval":
        result = pipelines.run_eval(cfg, ws)
    elif args.command == "maps":
        result = pipelines.run_maps(cfg, ws, args.model, args.images, args.png)
    elif args.command == "metrics":
        result = pipelines.run_metrics(cfg, ws)
    else:
        result = pipelines.run_temporal(cfg, ws, args.model)
    _emit(result)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Main entry point. Prints a JSON summary on stdout; errors go to stderr as JSON."""
    parser = build_parser()
    args = parser.parse_args(argv)

    log_level = logging.INFO
    if args.verbose:
        log_level = logging.DEBUG
    elif args.quiet:
        log_level = logging.ERROR

    setup_logging(level=log_level)

    version = get_app_version()
    logging.info(f"--- infogain v{version} ---")

    try:
        return run(args, log_level)
    except (InfogainError, ValidationError, FileNotFoundError) as e:
        logger.debug("Run failed", exc_info=True)
        json.dump(_error_payload(e), sys.stderr)
        sys.stderr.write("\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
