"""Per-scene metric records, aggregation, and the JSON experiment report."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import median
from typing import Mapping, Sequence

from .data import AnomalyMask, AnomalyScoreMap
from .exceptions import UndefinedMetricError
from .metrics import auroc, average_precision, contrast_ratio, is_constant, noise_level
from .pipeline import PipelineArtifacts

METRIC_NAMES = ("auroc", "average_precision", "contrast_ratio", "noise_level")


@dataclass
class SceneMetrics:
    scene_id: str
    auroc: float
    average_precision: float
    contrast_ratio: float
    noise_level: float
    constant_score: bool = False


@dataclass
class ExperimentReport:
    experiment_id: str
    backend: dict
    scenes: list[SceneMetrics]
    aggregates: dict
    exclusions: list[dict]
    config_snapshot: dict
    config_hash: str
    warnings: list[str] = field(default_factory=list)


def compute_scene_metrics(scene_id: str, score_map: AnomalyScoreMap,
                          mask: AnomalyMask) -> SceneMetrics:
    """All four metrics for one scene; raises UndefinedMetricError for a
    single-class mask."""
    return SceneMetrics(
        scene_id=scene_id,
        auroc=auroc(score_map, mask),
        average_precision=average_precision(score_map, mask),
        contrast_ratio=contrast_ratio(score_map, mask),
        noise_level=noise_level(score_map, mask),
        constant_score=is_constant(score_map),
    )


def aggregate_metrics(scenes: Sequence[SceneMetrics]) -> dict:
    """Means and medians per metric, recomputable from the per-scene entries."""
    out = {}
    for name in METRIC_NAMES:
        values = [getattr(s, name) for s in scenes]
        if values:
            out[f"mean_{name}"] = sum(values) / len(values)
            out[f"median_{name}"] = median(values)
    return out


def config_snapshot_hash(config_snapshot: Mapping) -> str:
    canonical = json.dumps(_jsonify(dict(config_snapshot)), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_report(experiment_id: str,
                 artifacts: Sequence[PipelineArtifacts],
                 masks: Mapping[str, AnomalyMask | None],
                 backend_descriptor: dict | None = None,
                 config_snapshot: dict | None = None) -> ExperimentReport:
    """Score every maskable scene; the rest lands in the exclusions section."""
    scenes: list[SceneMetrics] = []
    exclusions: list[dict] = []
    warnings: list[str] = []
    for art in artifacts:
        mask = masks.get(art.scene_id)
        if mask is None:
            exclusions.append({"scene_id": art.scene_id, "reason": "no mask"})
            continue
        try:
            scenes.append(compute_scene_metrics(art.scene_id, art.score_map, mask))
        except UndefinedMetricError as exc:
            exclusions.append({"scene_id": art.scene_id, "reason": str(exc)})
    if not scenes:
        warnings.append("no scorable scenes: all metrics undefined or masks missing")
    flagged = [s.scene_id for s in scenes if s.constant_score]
    if flagged:
        warnings.append(
            "constant score maps (AUROC 0.5 by the tie rule): " + ", ".join(flagged)
        )
    snapshot = dict(config_snapshot or {})
    return ExperimentReport(
        experiment_id=experiment_id,
        backend=backend_descriptor or {},
        scenes=scenes,
        aggregates=aggregate_metrics(scenes),
        exclusions=exclusions,
        config_snapshot=snapshot,
        config_hash=config_snapshot_hash(snapshot),
        warnings=warnings,
    )


def _jsonify(obj):
    """Make a payload JSON-safe; non-finite floats become strings
    ("inf" / "-inf" / "nan") so golden files stay bit-exact."""
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def report_to_json(report: ExperimentReport) -> str:
    return json.dumps(_jsonify(asdict(report)), indent=2, sort_keys=True)


def write_report(report: ExperimentReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_to_json(report))
    return path
