"""Structured experiment configuration: one JSON file, CLI flag overrides,
and validation that fails fast before any heavy work.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigError

VGG19_WEIGHTS_ENV = "STYLEBACK_VGG19_WEIGHTS"

EXPERIMENTS = ("exp1_cyclegan", "exp2_nst", "exp3_hybrid", "toy")

# experiment -> (forward backend, backward backend)
EXPERIMENT_BACKENDS = {
    "exp1_cyclegan": ("cyclegan", "cyclegan"),
    "exp2_nst": ("nst", "nst"),
    "exp3_hybrid": ("nst", "cyclegan"),
    "toy": ("nst", "nst"),
}


@dataclass
class NSTSection:
    extractor: str = "pretrained_vgg19"
    vgg19_weights: str | None = None
    vgg19_sha256: str | None = None
    content_weight: float = 1e5
    style_weight: float = 1e5
    iterations: int = 300
    step_size: float = 0.02
    init: str = "content"
    forward_style: str | None = None
    backward_style: str | None = None


@dataclass
class TrainSection:
    group: str = "toy"
    epochs: int = 4
    batch_size: int = 1
    learning_rate: float = 2e-4
    lambda_cycle: float = 10.0
    lambda_identity: float | None = None
    base_channels: int = 32
    n_residual_blocks: int = 3
    image_size: int = 64
    checkpoint_every: int = 1
    source_root: str | None = None
    target_root: str | None = None
    dataset_layout: str = "flat"


@dataclass
class CycleGANSection:
    forward_checkpoint: str | None = None
    forward_direction: str = "b_to_a"
    backward_checkpoint: str | None = None
    backward_direction: str = "a_to_b"
    train: TrainSection = field(default_factory=TrainSection)


@dataclass
class ToySection:
    n_scenes: int = 4
    image_size: int = 48
    iterations: int = 40
    # stronger style pull than the real-run default so the tiny extractor
    # visibly stylizes every synthetic scene
    style_weight: float = 1e6
    anomaly_fraction: float = 0.06
    n_train_images: int = 100  # per domain, for the toy CycleGAN task
    train_epochs: int = 2
    identity_smoke: bool = False


@dataclass
class ExperimentConfig:
    experiment: str = "toy"
    seed: int = 0
    jobs: int = 1
    output_dir: str = "styleback-out"
    dataset_root: str | None = None
    dataset_layout: str = "flat"
    score_metric: str = "mean_abs"
    blur_radius: int = 0
    max_scenes: int | None = None
    nst: NSTSection = field(default_factory=NSTSection)
    cyclegan: CycleGANSection = field(default_factory=CycleGANSection)
    toy: ToySection = field(default_factory=ToySection)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def backends(self) -> tuple[str, str]:
        return EXPERIMENT_BACKENDS[self.experiment]


def _build_section(cls, payload: dict, context: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        if key not in known:
            raise ConfigError(f"unknown config key {context}.{key}")
        if key == "train" and isinstance(value, dict):
            value = _build_section(TrainSection, value, f"{context}.train")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> ExperimentConfig:
    payload = dict(payload)
    sections = {"nst": NSTSection, "cyclegan": CycleGANSection, "toy": ToySection}
    kwargs = {}
    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in payload.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key}")
        if key in sections and isinstance(value, dict):
            value = _build_section(sections[key], value, key)
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path: Path | str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read the JSON config (optional), apply flat CLI overrides, then
    apply the VGG19 weights environment override."""
    payload: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    config = config_from_dict(payload)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = config
        parts = key.split(".")
        for part in parts[:-1]:
            target = getattr(target, part)
        if not hasattr(target, parts[-1]):
            raise ConfigError(f"unknown override {key}")
        setattr(target, parts[-1], value)
    env_weights = os.environ.get(VGG19_WEIGHTS_ENV)
    if env_weights:
        config.nst.vgg19_weights = env_weights
    return config


def _require_file(path: str | None, what: str):
    if path is None:
        raise ConfigError(f"{what} is required but not configured")
    if not Path(path).is_file():
        raise ConfigError(f"{what} does not exist: {path}")


def validate_config(config: ExperimentConfig, require_data: bool = True) -> None:
    """Reject inconsistent experiment/backend pairings and dangling paths
    before any heavy work."""
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"experiment must be one of {EXPERIMENTS}, got {config.experiment!r}"
        )
    if config.jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {config.jobs}")
    if config.score_metric not in ("mean_abs", "mean_squared", "luminance_abs"):
        raise ConfigError(f"unknown score_metric {config.score_metric!r}")
    forward, backward = config.backends

    if config.experiment == "toy":
        if config.toy.n_scenes < 1:
            raise ConfigError("toy.n_scenes must be >= 1")
        return  # toy is self-contained: no external paths

    if require_data:
        if config.dataset_root is None or not Path(config.dataset_root).is_dir():
            raise ConfigError(f"dataset_root does not exist: {config.dataset_root}")

    if forward == "nst" or backward == "nst":
        if config.nst.extractor == "pretrained_vgg19":
            _require_file(config.nst.vgg19_weights,
                          f"VGG19 weights file (or set {VGG19_WEIGHTS_ENV})")
        if forward == "nst":
            _require_file(config.nst.forward_style, "nst.forward_style image")
        if backward == "nst":
            _require_file(config.nst.backward_style, "nst.backward_style image")
    if forward == "cyclegan":
        _require_file(config.cyclegan.forward_checkpoint, "cyclegan.forward_checkpoint")
    if backward == "cyclegan":
        _require_file(config.cyclegan.backward_checkpoint, "cyclegan.backward_checkpoint")
