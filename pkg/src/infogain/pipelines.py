"""
End-to-end runs behind the CLI subcommands. Each `run_*` function takes a
validated configuration and a workspace, writes its artifacts and returns a
JSON-serializable summary.
"""

import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import ValidationError

from infogain.baselines import (
    fit_gold_standard,
    fit_histogram_baseline,
    gold_standard_ll,
    gold_standard_ll_per_image,
    histogram_baseline_densities,
)
from infogain.calibration import build_model_density, global_rescale, run_stages
from infogain.density import gaussian_blur, log_likelihood_bits_per_image
from infogain.errors import ConfigError, MissingArtifactError, ValidationFailedError
from infogain.maps import (
    info_gain_diff_map,
    info_gain_map,
    possible_gain_map,
    ratio_map,
    render_png,
    scatter_data,
)
from infogain.metrics import (
    auc_for_model,
    kl_fixation_based,
    kl_image_based,
    map_as_density,
    metric_correlations,
    rescale_metric,
)
from infogain.models import (
    Anchors,
    CalibrationParams,
    Dataset,
    DensityGrid,
    GoldStandard,
    HistogramBaseline,
    MetricValue,
    ModelReport,
    RunConfig,
    SaliencyMap,
    Stage,
    SynthConfig,
    TemporalParams,
)
from infogain.reporting import build_report, metric_rows, write_report
from infogain.storage.fixations import (
    parse_fixations_csv,
    parse_frames_csv,
    write_fixations_csv,
    write_frames_csv,
)
from infogain.storage.mapfile import load_model_maps, map_path, write_map
from infogain.synth import centre_prior, synthesize
from infogain.temporal import fit_temporal
from infogain.utils import parallel_map
from infogain.validation import validate_dataset
from infogain.workspace import RunWorkspace

logger = logging.getLogger("infogain.pipelines")

BASELINE_MODEL = "baseline"
STAGE_FLAGS = {"nonlin": Stage.NONLIN, "cb": Stage.CENTERBIAS, "blur": Stage.BLUR}


# --- configuration and data ---


def _read_document(path: Path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", path=str(path)) from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid JSON/YAML: {e}", path=str(path)) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", path=str(path))
    return data


def _resolve(base: Path, p: Path) -> Path:
    return p if p.is_absolute() else (base / p).resolve()


def load_config(
    path: Path,
    seed: int | None = None,
    output_dir: Path | None = None,
    jobs: int | None = None,
    max_iter: int | None = None,
) -> RunConfig:
    """Loads a run config; relative paths resolve against the config's directory
    and the keyword arguments override config fields."""
    path = Path(path)
    try:
        cfg = RunConfig.model_validate(_read_document(path))
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}", path=str(path)) from None

    base = path.parent.resolve()
    dataset = cfg.dataset.model_copy(
        update={
            "frames": _resolve(base, cfg.dataset.frames),
            "fixations": _resolve(base, cfg.dataset.fixations),
        }
    )
    models = {model_id: _resolve(base, p) for model_id, p in cfg.models.items()}
    optimizer = cfg.optimizer
    updates: dict[str, Any] = {
        "dataset": dataset,
        "models": models,
        # --out is relative to the working directory, the config field to the config file
        "output_dir": Path(output_dir).resolve()
        if output_dir is not None
        else _resolve(base, cfg.output_dir),
    }
    if seed is not None:
        updates["seed"] = seed
        optimizer = optimizer.model_copy(update={"seed": seed})
    if max_iter is not None:
        optimizer = optimizer.model_copy(update={"max_iter": max_iter})
    if jobs is not None:
        updates["jobs"] = jobs
    updates["optimizer"] = optimizer
    cfg = cfg.model_copy(update=updates)

    for p in (cfg.dataset.frames, cfg.dataset.fixations, *cfg.models.values()):
        if not p.exists():
            raise ConfigError("referenced path does not exist", path=str(p))
    if BASELINE_MODEL in cfg.models:
        raise ConfigError(f"model id {BASELINE_MODEL!r} is reserved")
    return cfg


def load_dataset(cfg: RunConfig, models: Sequence[str] | None = None) -> Dataset:
    """Reads frames, fixations and the maps of `models` (all by default), then validates."""
    frames = parse_frames_csv(cfg.dataset.frames)
    trains = parse_fixations_csv(cfg.dataset.fixations, frames)
    wanted = list(cfg.models) if models is None else list(models)
    maps: dict[tuple[str, str], SaliencyMap] = {}
    for model_id in wanted:
        if model_id not in cfg.models:
            raise ConfigError("model not in config", model_id=model_id)
        for image_id, smap in load_model_maps(model_id, cfg.models[model_id], frames).items():
            maps[(model_id, image_id)] = smap
    d = Dataset(frames=frames, trains=trains, maps=maps)
    violations = validate_dataset(d)
    if violations:
        raise ValidationFailedError(
            f"{len(violations)} dataset violation(s)", violations=violations
        )
    logger.info(
        f"Dataset: {len(frames)} image(s), {len(d.subjects())} subject(s), "
        f"{d.fixation_count()} fixation(s), {len(wanted)} model(s)"
    )
    return d


def run_validate(cfg: RunConfig) -> list[str]:
    try:
        load_dataset(cfg)
    except ValidationFailedError as e:
        return list(e.details.get("violations", [e.message]))
    return []


# --- baselines ---


def fit_baselines(cfg: RunConfig, d: Dataset) -> tuple[HistogramBaseline, GoldStandard, Anchors]:
    histogram = fit_histogram_baseline(d, cfg.histogram.bins, cfg.histogram.lambdas)
    gold = fit_gold_standard(d, cfg.gold.sigmas, cfg.gold.folds, cfg.seed)
    baseline_ll = log_likelihood_bits_per_image(
        histogram_baseline_densities(histogram, d), d.trains
    )[0]
    anchors = Anchors(baseline_ll=baseline_ll, gold_ll=gold_standard_ll(gold, d))
    logger.info(
        f"Anchors: baseline {anchors.baseline_ll:.4f}, gold {anchors.gold_ll:.4f} bits/fix"
    )
    return histogram, gold, anchors


def run_baselines(cfg: RunConfig, ws: RunWorkspace, which: str) -> dict[str, Any]:
    d = load_dataset(cfg, models=[])
    summary: dict[str, Any] = {}
    if which == "histogram":
        h = fit_histogram_baseline(d, cfg.histogram.bins, cfg.histogram.lambdas)
        densities = histogram_baseline_densities(h, d)
        ll = log_likelihood_bits_per_image(densities, d.trains)[0]
        for image_id, grid in densities.items():
            ws.save_map(f"baselines/histogram/{image_id}.smap", grid.pmf)
        summary = {
            "bins_x": h.bins_x,
            "bins_y": h.bins_y,
            "lambda": h.lam,
            "heldout_ll": ll,
            "candidates": [
                {"bins_x": bx, "bins_y": by, "lambda": lam, "ll": cll}
                for bx, by, lam, cll in h.candidates
            ],
        }
        ws.save_json("baselines/histogram.json", summary)
    elif which == "gold":
        g = fit_gold_standard(d, cfg.gold.sigmas, cfg.gold.folds, cfg.seed)
        for image_id, grid in g.full.items():
            ws.save_map(f"baselines/gold/{image_id}.smap", grid.pmf)
        summary = {
            "kernel_sigma": g.kernel_sigma,
            "folds": g.folds,
            "ll_loso": gold_standard_ll(g, d, "loso"),
            "ll_in_sample": gold_standard_ll(g, d, "in_sample"),
            "cv_scores": [{"sigma": s, "ll": ll} for s, ll in g.cv_scores],
        }
        ws.save_json("baselines/gold.json", summary)
    else:
        raise ConfigError(f"unknown baseline {which!r}")
    return summary


# --- calibration ---


def calibrate_model(
    cfg: RunConfig, d: Dataset, model_id: str, stages: Sequence[Stage] = tuple(Stage)
) -> tuple[dict[str, SaliencyMap], dict[Stage, tuple[CalibrationParams, float]]]:
    maps = d.maps_for_model(model_id)
    if not maps:
        raise MissingArtifactError("no maps loaded for model", model_id=model_id)
    rescaled = global_rescale(maps)
    return rescaled, run_stages(rescaled, d.trains, cfg.optimizer, stages)


def model_densities(
    d: Dataset, rescaled: dict[str, SaliencyMap], params: CalibrationParams
) -> dict[str, DensityGrid]:
    return {
        f.image_id: build_model_density(rescaled[f.image_id], params, f) for f in d.frames
    }


def _stages_upto(stage: Stage) -> list[Stage]:
    order = list(Stage)
    return order[: order.index(stage) + 1]


def _save_calibration(
    ws: RunWorkspace, model_id: str, results: dict[Stage, tuple[CalibrationParams, float]]
) -> dict[str, Any]:
    final_stage = list(results)[-1]
    params, ll = results[final_stage]
    doc = {
        "model_id": model_id,
        "params": params.to_json(),
        "ll": ll,
        "stage_lls": {s.value: v for s, (_, v) in results.items()},
    }
    ws.save_json(f"calibration/{model_id}.json", doc)
    return doc


def run_calibrate(cfg: RunConfig, ws: RunWorkspace, model_id: str, stage: str) -> dict[str, Any]:
    d = load_dataset(cfg, models=[model_id])
    _, results = calibrate_model(cfg, d, model_id, _stages_upto(STAGE_FLAGS[stage]))
    return _save_calibration(ws, model_id, results)


def run_eval(cfg: RunConfig, ws: RunWorkspace) -> dict[str, Any]:
    d = load_dataset(cfg)
    _, _, anchors = fit_baselines(cfg, d)

    def evaluate(model_id: str) -> dict[str, float]:
        _, results = calibrate_model(cfg, d, model_id)
        _save_calibration(ws, model_id, results)
        return {s.value: ll for s, (_, ll) in results.items()}

    model_ids = d.model_ids()
    stage_lls = dict(zip(model_ids, parallel_map(evaluate, model_ids, cfg.jobs)))
    report = build_report(anchors, stage_lls, metadata={"gold_estimator": anchors.gold_estimator})
    write_report(ws, report)
    return report.model_dump(mode="json")


# --- maps ---


def run_maps(
    cfg: RunConfig,
    ws: RunWorkspace,
    model_id: str,
    images: Sequence[str] | None = None,
    png: bool = False,
) -> dict[str, Any]:
    d = load_dataset(cfg, models=[model_id])
    histogram, gold, _ = fit_baselines(cfg, d)
    priors = histogram_baseline_densities(histogram, d)
    rescaled, results = calibrate_model(cfg, d, model_id)
    params, _ = results[Stage.BLUR]
    densities = model_densities(d, rescaled, params)

    selected = list(images) if images else d.image_ids()
    unknown = sorted(set(selected) - set(d.image_ids()))
    if unknown:
        raise ConfigError("unknown image ids", images=unknown)

    totals = {}
    for image_id in selected:
        g = gold.full_density(image_id)
        grids = {
            "ratio": ratio_map(densities[image_id], priors[image_id]),
            "gold_ratio": ratio_map(g, priors[image_id]),
            "info_gain": info_gain_map(g, densities[image_id], priors[image_id]).grid,
            "diff": info_gain_diff_map(g, densities[image_id], priors[image_id]).grid,
            "possible_gain": possible_gain_map(g, priors[image_id]).grid,
        }
        for kind, grid in grids.items():
            ws.save_map(f"maps/{model_id}/{image_id}.{kind}.smap", grid)
            if png and kind != "ratio" and kind != "gold_ratio":
                render_png(grid, ws.path(f"maps/{model_id}/{image_id}.{kind}.png"))
        totals[image_id] = {k: float(grids[k].sum()) for k in ("info_gain", "diff", "possible_gain")}

    gold_ll = {k: v for k, (v, _) in gold_standard_ll_per_image(gold, d).items()}
    base_ll = {k: v for k, (v, _) in log_likelihood_bits_per_image(priors, d.trains)[1].items()}
    model_ll = {k: v for k, (v, _) in log_likelihood_bits_per_image(densities, d.trains)[1].items()}
    points = scatter_data(
        {k: gold_ll[k] for k in selected if k in gold_ll},
        base_ll,
        model_ll,
    )
    ws.save_csv(
        f"maps/{model_id}/scatter.csv",
        ["image_id", "possible_gain_bits", "explained_percent", "flags"],
        [[p.image_id, p.possible_gain, p.explained, p.flags] for p in points],
        scalar_estimator="sample mean over each image's fixations",
        map_estimator="gold-weighted sum over pixels",
    )
    summary = {"model_id": model_id, "map_totals": totals}
    ws.save_json(f"maps/{model_id}/maps.json", summary)
    return summary


# --- metrics ---


def _weighted_kl_image(
    d: Dataset, model: dict[str, DensityGrid], gold: GoldStandard
) -> float:
    total = 0.0
    count = 0
    for f in d.frames:
        n = sum(len(t) for t in d.trains_for_image(f.image_id))
        if n == 0:
            continue
        total += n * kl_image_based(model[f.image_id], gold.full_density(f.image_id))
        count += n
    return total / count


def _raw_metrics(
    cfg: RunConfig, d: Dataset, grids: dict[str, Any], densities: dict[str, DensityGrid],
    gold: GoldStandard,
) -> dict[str, float]:
    m = cfg.metrics
    return {
        "auc_uniform": auc_for_model(grids, d.trains, d.frames, m.auc_uniform),
        "auc_shuffled": auc_for_model(grids, d.trains, d.frames, m.auc_shuffled),
        "kl_fixation": kl_fixation_based(grids, d.trains, d.frames, m.kl, m.auc_uniform),
        "kl_image": _weighted_kl_image(d, densities, gold),
        "ll": log_likelihood_bits_per_image(densities, d.trains)[0],
    }


def run_metrics(cfg: RunConfig, ws: RunWorkspace) -> dict[str, Any]:
    d = load_dataset(cfg)
    histogram, gold, anchors = fit_baselines(cfg, d)
    eps = cfg.metrics.map_epsilon

    baseline = histogram_baseline_densities(histogram, d)
    anchor_values = {
        "baseline": _raw_metrics(cfg, d, baseline, baseline, gold),
        "gold": _raw_metrics(cfg, d, gold.full, gold.full, gold),
    }
    anchor_values["gold"]["ll"] = anchors.gold_ll
    anchor_values["baseline"]["ll"] = anchors.baseline_ll

    def evaluate(model_id: str) -> tuple[dict[str, float], dict[str, float], dict[str, float]]:
        rescaled, results = calibrate_model(cfg, d, model_id)
        raw_maps = {k: m.values for k, m in rescaled.items()}
        raw_dens = {k: map_as_density(v, eps, k) for k, v in raw_maps.items()}
        params, _ = results[Stage.BLUR]
        calibrated = model_densities(d, rescaled, params)
        for image_id, grid in calibrated.items():
            ws.save_map(f"densities/{model_id}/{image_id}.smap", grid.pmf)
        stage_lls = {s.value: ll for s, (_, ll) in results.items()}
        return (
            _raw_metrics(cfg, d, raw_maps, raw_dens, gold),
            _raw_metrics(cfg, d, calibrated, calibrated, gold),
            stage_lls,
        )

    model_ids = d.model_ids()
    evaluated = parallel_map(evaluate, model_ids, cfg.jobs)

    metrics: dict[str, dict[str, MetricValue]] = {}
    for model_id, (raw, calibrated, _) in zip(model_ids, evaluated):
        values = {}
        for panel, table in (("raw", raw), ("calibrated", calibrated)):
            for name, value in table.items():
                lo = anchor_values["baseline"][name]
                hi = anchor_values["gold"][name]
                rescaled_value = rescale_metric(value, lo, hi) if hi != lo else None
                values[f"{panel}/{name}"] = MetricValue(raw=value, rescaled=rescaled_value)
        metrics[model_id] = values

    stage_lls = {model_id: lls for model_id, (_, _, lls) in zip(model_ids, evaluated)}
    report = build_report(anchors, stage_lls, metrics)
    ws.save_csv("metrics.csv", ["model_id", "metric_id", "raw", "rescaled"], metric_rows(report))

    correlations = _correlations(report.models)
    ws.save_csv(
        "correlations.csv",
        ["metric_id", "pearson_r", "spearman_rho"],
        [[k, r, rho] for k, (r, rho) in correlations.items()],
        target="calibrated percent explained / 100",
    )
    summary = {
        "anchors": {k: v for k, v in anchor_values.items()},
        "metrics": {m.model_id: {k: v.model_dump() for k, v in m.metrics.items()} for m in report.models},
        "correlations": {k: {"pearson_r": r, "spearman_rho": rho} for k, (r, rho) in correlations.items()},
    }
    ws.save_json("metrics.json", summary)
    return summary


def _correlations(rows: Sequence[ModelReport]) -> dict[str, tuple[float, float]]:
    if len(rows) < 3:
        logger.warning(f"Skipping metric correlations: {len(rows)} model(s), need 3")
        return {}
    gain = [r.percent_explained / 100.0 for r in rows]
    if np.ptp(gain) == 0:
        logger.warning("Skipping metric correlations: all models explain the same gain")
        return {}
    metric_ids = sorted(
        k for k in rows[0].metrics if all(r.metrics[k].rescaled is not None for r in rows)
    )
    out = {}
    for metric_id in metric_ids:
        values = [r.metrics[metric_id].rescaled for r in rows]
        if np.ptp(values) == 0:
            logger.warning(f"Skipping constant metric {metric_id}")
            continue
        out.update(metric_correlations({metric_id: values}, gain))
    return out


# --- temporal ---


def run_temporal(cfg: RunConfig, ws: RunWorkspace, model_id: str) -> dict[str, Any]:
    if model_id == BASELINE_MODEL:
        d = load_dataset(cfg, models=[])
        histogram = fit_histogram_baseline(d, cfg.histogram.bins, cfg.histogram.lambdas)
        bases = histogram_baseline_densities(histogram, d)
    else:
        d = load_dataset(cfg, models=[model_id])
        rescaled, results = calibrate_model(cfg, d, model_id)
        bases = model_densities(d, rescaled, results[Stage.BLUR][0])
    spatial_ll = log_likelihood_bits_per_image(bases, d.trains)[0]
    params, ll = fit_temporal(bases, d.trains, cfg.optimizer)
    doc = {
        "model_id": model_id,
        "params": params.model_dump(),
        "ll_spatial": spatial_ll,
        "ll_temporal": ll,
        "delta_ll": ll - spatial_ll,
    }
    ws.save_json(f"temporal/{model_id}.json", doc)
    return doc


# --- synthetic data ---


def default_temporal(cfg: SynthConfig) -> TemporalParams:
    return TemporalParams(delta=-0.8, sigma_t=20.0 * cfg.width / 64.0, alpha_t=0.5)


def run_synth(cfg: SynthConfig, kind: str) -> dict[str, Any]:
    """Writes frames.csv, fixations.csv, maps of a few reference models and a
    ready-to-run config.json into `cfg.output_dir`."""
    if kind == "temporal" and cfg.temporal is None:
        cfg = cfg.model_copy(update={"temporal": default_temporal(cfg)})
    elif kind == "spatial":
        cfg = cfg.model_copy(update={"temporal": None})
    elif kind != "temporal":
        raise ConfigError(f"unknown generator {kind!r}")

    ws = RunWorkspace(
        cfg.output_dir, cfg.model_dump(mode="json", exclude={"output_dir"}), cfg.seed
    )
    frames, trains, densities = synthesize(cfg)
    write_frames_csv(ws.path("frames.csv"), frames)
    write_fixations_csv(ws.path("fixations.csv"), trains)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.n_images + 2)[-1])
    models = {
        "generator": lambda f: densities[f.image_id].pmf,
        "centre": lambda f: centre_prior(f, cfg.center_ratio),
        "blurred": lambda f: gaussian_blur(densities[f.image_id].pmf, max(f.width, f.height) / 8.0),
        "noisy": lambda f: densities[f.image_id].pmf * rng.lognormal(0.0, 0.5, f.shape),
    }
    for model_id, make in models.items():
        for frame in frames:
            write_map(map_path(ws.path(f"maps/{model_id}"), frame.image_id), make(frame))

    config = {
        "dataset": {"frames": "frames.csv", "fixations": "fixations.csv"},
        "models": {model_id: f"maps/{model_id}" for model_id in models},
        "output_dir": "out",
        "seed": cfg.seed,
    }
    ws.save_json("config.json", config)
    summary = {
        "output_dir": str(cfg.output_dir),
        "images": len(frames),
        "trains": len(trains),
        "fixations": sum(len(t) for t in trains),
        "models": list(models),
        "temporal": cfg.temporal.model_dump() if cfg.temporal else None,
    }
    return summary
