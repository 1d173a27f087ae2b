"""
Assembly of the per-model evaluation table: stage log-likelihoods, factor
contributions, both percentages and metric values.

"Percent of total" divides by the gold-standard LL (total information about
fixation placement); "percent explained" divides by gold minus baseline (the
information a saliency model could add beyond the image-independent prior).
"""

import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from infogain.density import percent_explained
from infogain.errors import DegenerateAnchorsError, MissingArtifactError
from infogain.models import Anchors, EvaluationReport, MetricValue, ModelReport, Stage
from infogain.workspace import RunWorkspace

logger = logging.getLogger("infogain.reporting")

CONTRIBUTION_KEYS = ("nonlin", "centerbias", "blur")

REPORT_COLUMNS = [
    "model_id",
    "ll_nonlin",
    "ll_nonlin_cb",
    "ll_final",
    "contrib_nonlin",
    "contrib_centerbias",
    "contrib_blur",
    "percent_explained",
    "percent_of_total",
]
METRIC_COLUMNS = ["model_id", "metric_id", "raw", "rescaled"]


def _model_row(
    model_id: str,
    stage_lls: Mapping[str, float],
    anchors: Anchors,
    metrics: Mapping[str, MetricValue],
) -> ModelReport:
    missing = [s.value for s in Stage if s.value not in stage_lls]
    if missing:
        raise MissingArtifactError(
            "stage log-likelihoods missing", model_id=model_id, stages=missing
        )
    if anchors.gold_ll == 0:
        raise DegenerateAnchorsError(
            "gold standard scores zero bits/fixation", model_id=model_id, gold=anchors.gold_ll
        )
    ll_nonlin = stage_lls[Stage.NONLIN.value]
    ll_cb = stage_lls[Stage.CENTERBIAS.value]
    ll_final = stage_lls[Stage.BLUR.value]
    return ModelReport(
        model_id=model_id,
        stage_lls={s.value: float(stage_lls[s.value]) for s in Stage},
        contributions=dict(
            zip(CONTRIBUTION_KEYS, (ll_nonlin, ll_cb - ll_nonlin, ll_final - ll_cb))
        ),
        final_ll=ll_final,
        percent_explained=percent_explained(ll_final, anchors.baseline_ll, anchors.gold_ll),
        percent_of_total=100.0 * ll_final / anchors.gold_ll,
        metrics=dict(metrics),
    )


def build_report(
    anchors: Anchors,
    stage_lls: Mapping[str, Mapping[str, float]],
    metrics: Mapping[str, Mapping[str, MetricValue]] | None = None,
    metadata: dict[str, Any] | None = None,
) -> EvaluationReport:
    """
    One row per model, ordered by final LL descending (ties by model id).
    `stage_lls` maps model id to {stage value: bits/fixation}.
    """
    metrics = metrics or {}
    unknown = sorted(set(metrics) - set(stage_lls))
    if unknown:
        raise MissingArtifactError("metrics given for models without calibration", models=unknown)
    rows = [
        _model_row(model_id, lls, anchors, metrics.get(model_id, {}))
        for model_id, lls in stage_lls.items()
    ]
    rows.sort(key=lambda r: (-r.final_ll, r.model_id))
    logger.info(
        f"Report: {len(rows)} model(s), baseline {anchors.baseline_ll:.4f}, "
        f"gold {anchors.gold_ll:.4f} bits/fix"
    )
    return EvaluationReport(
        anchors=anchors,
        possible_gain=anchors.possible_gain,
        models=rows,
        metadata=metadata or {},
    )


def rebuild_report(report: EvaluationReport) -> EvaluationReport:
    """Regenerates a report from the stage LLs and metric values it carries."""
    return build_report(
        report.anchors,
        {m.model_id: m.stage_lls for m in report.models},
        {m.model_id: m.metrics for m in report.models},
        report.metadata,
    )


def report_rows(report: EvaluationReport) -> list[list[Any]]:
    rows = []
    for m in report.models:
        rows.append(
            [
                m.model_id,
                m.stage_lls[Stage.NONLIN.value],
                m.stage_lls[Stage.CENTERBIAS.value],
                m.final_ll,
                *(m.contributions[k] for k in CONTRIBUTION_KEYS),
                m.percent_explained,
                m.percent_of_total,
            ]
        )
    return rows


def metric_rows(report: EvaluationReport) -> list[list[Any]]:
    rows = []
    for m in report.models:
        for metric_id in sorted(m.metrics):
            value = m.metrics[metric_id]
            rows.append([m.model_id, metric_id, value.raw, value.rescaled])
    return rows


def write_report(ws: RunWorkspace, report: EvaluationReport) -> tuple[Path, Path]:
    data = report.model_dump(mode="json", exclude={"metadata"})
    json_path = ws.save_json("report.json", data, **report.metadata)
    csv_path = ws.save_csv(
        "report.csv",
        REPORT_COLUMNS,
        report_rows(report),
        baseline_ll=report.anchors.baseline_ll,
        gold_ll=report.anchors.gold_ll,
        gold_estimator=report.anchors.gold_estimator,
    )
    return json_path, csv_path


def load_report(path: Path) -> EvaluationReport:
    with open(path, encoding="utf-8") as f:
        return EvaluationReport.model_validate(json.load(f))
