"""Forward transfer -> backward transfer -> difference map, over any of the
three backend combinations (cyclegan/cyclegan, nst/nst, nst/cyclegan).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cyclegan import DIRECTIONS, TranslationModel, translate
from .data import (
    AnomalyScoreMap,
    ImageTensor,
    SceneRecord,
    resize,
    write_image_png,
    write_score_map_png,
)
from .exceptions import ArgumentError, PipelineStageError
from .nst import NSTParams, nst_optimize

BACKEND_KINDS = ("nst", "cyclegan")
SCORE_METRICS = ("mean_abs", "mean_squared", "luminance_abs")
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # Rec. 601


@dataclass
class NSTBackendConfig:
    """Image-optimization transfer guided by a fixed style image."""

    params: NSTParams
    style: ImageTensor

    def describe(self) -> dict:
        style_digest = hashlib.sha256(
            np.ascontiguousarray(self.style.values).tobytes()
        ).hexdigest()[:12]
        return {
            "kind": "nst",
            "params": asdict(self.params),
            "style_shape": [self.style.channels, self.style.height, self.style.width],
            "style_digest": style_digest,
            "seed": self.params.seed,
        }


@dataclass
class CycleGANBackendConfig:
    """Single generator pass of a trained (or seeded untrained) model."""

    model: TranslationModel
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ArgumentError(
                f"direction must be one of {DIRECTIONS}, got {self.direction!r}"
            )

    def describe(self) -> dict:
        meta = self.model.training_meta
        return {
            "kind": "cyclegan",
            "group_id": meta.group_id,
            "epochs_completed": meta.epochs_completed,
            "seed": meta.seed,
            "direction": self.direction,
            "arch": {
                "base_channels": self.model.arch.base_channels,
                "n_residual_blocks": self.model.arch.n_residual_blocks,
                "image_size": self.model.arch.image_size,
            },
        }


_CONFIG_TYPES = {"nst": NSTBackendConfig, "cyclegan": CycleGANBackendConfig}


@dataclass
class BackendChoice:
    forward: str
    forward_config: NSTBackendConfig | CycleGANBackendConfig
    backward: str
    backward_config: NSTBackendConfig | CycleGANBackendConfig

    def __post_init__(self):
        for kind, config, role in ((self.forward, self.forward_config, "forward"),
                                   (self.backward, self.backward_config, "backward")):
            if kind not in BACKEND_KINDS:
                raise ArgumentError(f"{role} backend must be one of {BACKEND_KINDS}, got {kind!r}")
            if not isinstance(config, _CONFIG_TYPES[kind]):
                raise ArgumentError(
                    f"{role} config kind mismatch: backend {kind!r} needs "
                    f"{_CONFIG_TYPES[kind].__name__}, got {type(config).__name__}"
                )

    def describe(self) -> dict:
        return {
            "forward": self.forward_config.describe(),
            "backward": self.backward_config.describe(),
        }


@dataclass
class PipelineArtifacts:
    scene_id: str
    original: ImageTensor
    stylized: ImageTensor
    reconstruction: ImageTensor
    score_map: AnomalyScoreMap

    def __post_init__(self):
        dims = {
            (t.height, t.width)
            for t in (self.original, self.stylized, self.reconstruction)
        }
        dims.add((self.score_map.height, self.score_map.width))
        if len(dims) != 1:
            raise ArgumentError(f"artifact dimensions disagree: {sorted(dims)}")


def _apply_backend(image: ImageTensor,
                   config: NSTBackendConfig | CycleGANBackendConfig) -> ImageTensor:
    if isinstance(config, NSTBackendConfig):
        return nst_optimize(image, config.style, config.params).output
    size = config.model.arch.image_size
    h, w = image.height, image.width
    resized = image if (h, w) == (size, size) else resize(image, size, size)
    out = translate(config.model, resized, config.direction)
    return out if (h, w) == (size, size) else resize(out, h, w)


def forward_transfer(image: ImageTensor, backend: BackendChoice,
                     scene_id: str = "") -> ImageTensor:
    """Map the input into the style domain; output keeps the input's size."""
    try:
        return _apply_backend(image.to_unit(), backend.forward_config)
    except Exception as exc:
        raise PipelineStageError("forward", scene_id, exc) from exc


def backward_transfer(stylized: ImageTensor, backend: BackendChoice,
                      scene_id: str = "") -> ImageTensor:
    """Map the stylized image back toward the original domain."""
    try:
        return _apply_backend(stylized.to_unit(), backend.backward_config)
    except Exception as exc:
        raise PipelineStageError("backward", scene_id, exc) from exc


def difference_map(original: ImageTensor, reconstruction: ImageTensor,
                   metric: str = "mean_abs") -> AnomalyScoreMap:
    """Per-pixel difference between two unit-range images.

    `mean_abs` (default) and `mean_squared` average over channels;
    `luminance_abs` compares Rec. 601 luminance instead.
    """
    if metric not in SCORE_METRICS:
        raise ArgumentError(f"metric must be one of {SCORE_METRICS}, got {metric!r}")
    a = original.to_unit()
    b = reconstruction.to_unit()
    if a.values.shape != b.values.shape:
        raise ArgumentError(
            f"shape mismatch: {a.values.shape} vs {b.values.shape}"
        )
    va = a.values.astype(np.float64)
    vb = b.values.astype(np.float64)
    if metric == "luminance_abs":
        weights = _LUMA_WEIGHTS if a.channels == 3 else np.ones(1)
        luma_a = np.tensordot(weights, va, axes=1)
        luma_b = np.tensordot(weights, vb, axes=1)
        return AnomalyScoreMap(np.abs(luma_a - luma_b))
    diff = np.abs(va - vb)
    if metric == "mean_squared":
        diff = diff ** 2
    return AnomalyScoreMap(diff.mean(axis=0))


def box_blur(score_map: AnomalyScoreMap, radius: int) -> AnomalyScoreMap:
    """Optional post-process: (2r+1)^2 box average with edge replication."""
    if radius < 0:
        raise ArgumentError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return score_map
    vals = np.pad(score_map.values, radius, mode="edge")
    k = 2 * radius + 1
    csum = np.cumsum(np.cumsum(vals, axis=0), axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0)))
    h, w = score_map.values.shape
    out = (csum[k:k + h, k:k + w] - csum[:h, k:k + w]
           - csum[k:k + h, :w] + csum[:h, :w]) / (k * k)
    return AnomalyScoreMap(np.clip(out, 0.0, 1.0))


def run_pipeline(scene: SceneRecord, backend: BackendChoice,
                 out_dir: Path | str | None = None,
                 score_metric: str = "mean_abs",
                 blur_radius: int = 0) -> PipelineArtifacts:
    """Run the full forward/backward/difference flow for one scene."""
    original = scene.image.to_unit()
    stylized = forward_transfer(original, backend, scene.scene_id)
    reconstruction = backward_transfer(stylized, backend, scene.scene_id)
    try:
        score = difference_map(original, reconstruction, score_metric)
        if blur_radius > 0:
            score = box_blur(score, blur_radius)
    except Exception as exc:
        raise PipelineStageError("difference", scene.scene_id, exc) from exc
    artifacts = PipelineArtifacts(scene.scene_id, original, stylized,
                                  reconstruction, score)
    if out_dir is not None:
        persist_artifacts(artifacts, backend, out_dir)
    return artifacts


def persist_artifacts(artifacts: PipelineArtifacts, backend: BackendChoice,
                      out_dir: Path | str) -> Path:
    scene_dir = Path(out_dir) / artifacts.scene_id.replace("/", "_")
    scene_dir.mkdir(parents=True, exist_ok=True)
    write_image_png(artifacts.original, scene_dir / "original.png")
    write_image_png(artifacts.stylized, scene_dir / "stylized.png")
    write_image_png(artifacts.reconstruction, scene_dir / "reconstruction.png")
    write_score_map_png(artifacts.score_map, scene_dir / "score_map.png")
    meta = {"scene_id": artifacts.scene_id, "backend": backend.describe()}
    (scene_dir / "artifacts.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return scene_dir


def run_batch(scenes: Sequence[SceneRecord], backend: BackendChoice,
              out_dir: Path | str | None = None,
              score_metric: str = "mean_abs",
              blur_radius: int = 0,
              jobs: int = 1) -> tuple[list[PipelineArtifacts], list[PipelineStageError]]:
    """Run scenes independently; failed scenes are collected, not fatal."""
    results: dict[str, PipelineArtifacts] = {}
    failures: list[PipelineStageError] = []

    def one(scene: SceneRecord):
        return run_pipeline(scene, backend, out_dir, score_metric, blur_radius)

    if jobs <= 1:
        for scene in scenes:
            try:
                results[scene.scene_id] = one(scene)
            except PipelineStageError as exc:
                failures.append(exc)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {scene.scene_id: pool.submit(one, scene) for scene in scenes}
        for scene_id, future in futures.items():
            try:
                results[scene_id] = future.result()
            except PipelineStageError as exc:
                failures.append(exc)
    ordered = [results[s.scene_id] for s in scenes if s.scene_id in results]
    return ordered, failures
