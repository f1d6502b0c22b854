"""Named-layer convolutional feature extraction for the style-transfer losses.

Two extractor kinds share one interface: `pretrained_vgg19` loads VGG19
convolution weights from a local file for real runs, and `tiny_test` is a
three-layer seeded network that makes the whole optimization loop testable
in seconds. Layer names follow the `conv<block>_<index>` convention and
refer to the activation output of that convolution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import ImageTensor
from .exceptions import ArgumentError, ConfigError

VGG19_URL = "https://download.pytorch.org/models/vgg19-dcbb9e9d.pth"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Conventional choice in open-source NST code: one mid-depth content
# layer, the first convolution of each block for style.
DEFAULT_CONTENT_LAYERS = ("conv4_2",)
DEFAULT_STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")

TINY_CONTENT_LAYERS = ("conv2_1",)
TINY_STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1")

_VGG19_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
              512, 512, 512, 512, "M", 512, 512, 512, 512, "M")

_TINY_CHANNELS = (8, 16, 16)
TINY_LAYER_NAMES = ("conv1_1", "conv2_1", "conv3_1")


def _vgg19_layer_names() -> tuple[str, ...]:
    names = []
    block, idx = 1, 1
    for item in _VGG19_CFG:
        if item == "M":
            block += 1
            idx = 1
        else:
            names.append(f"conv{block}_{idx}")
            idx += 1
    return tuple(names)


VGG19_LAYER_NAMES = _vgg19_layer_names()

_AVAILABLE = {
    "pretrained_vgg19": VGG19_LAYER_NAMES,
    "tiny_test": TINY_LAYER_NAMES,
}


def available_layers(kind: str) -> tuple[str, ...]:
    if kind not in _AVAILABLE:
        raise ArgumentError(f"unknown extractor kind {kind!r}")
    return _AVAILABLE[kind]


@dataclass(frozen=True)
class ExtractorSpec:
    """Which extractor to build and which layers feed the losses."""

    kind: str
    content_layers: tuple[str, ...]
    style_layers: tuple[str, ...]
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    seed: int = 0
    # tiny_test knobs; "linear" + use_bias=False is the test-only
    # configuration for the homogeneity probe.
    activation: str = "tanh"
    use_bias: bool = True
    weights_path: str | None = None
    weights_sha256: str | None = None

    def __post_init__(self):
        avail = available_layers(self.kind)
        for name in (*self.content_layers, *self.style_layers):
            if name not in avail:
                raise ArgumentError(
                    f"unknown layer {name!r} for {self.kind}; available: {', '.join(avail)}"
                )
        if self.activation not in ("tanh", "linear"):
            raise ArgumentError(f"activation must be 'tanh' or 'linear', got {self.activation!r}")
        if not all(np.isfinite(self.mean)) or not all(np.isfinite(self.std)):
            raise ArgumentError("preprocessing statistics must be finite")
        if any(s == 0 for s in self.std):
            raise ArgumentError("preprocessing std must be nonzero")

    @property
    def tap_layers(self) -> tuple[str, ...]:
        """Requested layers in extraction-depth order, content and style merged."""
        wanted = set(self.content_layers) | set(self.style_layers)
        return tuple(n for n in available_layers(self.kind) if n in wanted)


def vgg19_spec(content_layers=DEFAULT_CONTENT_LAYERS,
               style_layers=DEFAULT_STYLE_LAYERS,
               weights_path: str | Path | None = None,
               weights_sha256: str | None = None) -> ExtractorSpec:
    return ExtractorSpec(
        kind="pretrained_vgg19",
        content_layers=tuple(content_layers),
        style_layers=tuple(style_layers),
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        weights_path=str(weights_path) if weights_path is not None else None,
        weights_sha256=weights_sha256,
    )


def tiny_spec(seed: int = 0,
              content_layers=TINY_CONTENT_LAYERS,
              style_layers=TINY_STYLE_LAYERS,
              activation: str = "tanh",
              use_bias: bool = True) -> ExtractorSpec:
    # Identity preprocessing keeps the tiny extractor linear when the
    # activations are configured linear.
    return ExtractorSpec(
        kind="tiny_test",
        content_layers=tuple(content_layers),
        style_layers=tuple(style_layers),
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        seed=seed,
        activation=activation,
        use_bias=use_bias,
    )


@dataclass
class FeatureBundle:
    """Ordered map from layer name to (channels, h, w) feature tensor."""

    layers: dict[str, torch.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> torch.Tensor:
        if name not in self.layers:
            raise ArgumentError(
                f"layer {name!r} not in bundle; available: {', '.join(self.layers)}"
            )
        return self.layers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.layers

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.layers)


class _Normalize(nn.Module):
    def __init__(self, mean, std):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float64).view(3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float64).view(3, 1, 1))

    def forward(self, x):
        return (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)


class TinyExtractor(nn.Module):
    """Three stride-2 convolutions with a smooth nonlinearity, seeded weights.

    Weights are stored in float64 and cast to the input dtype on the fly,
    so the same extractor serves float32 runs and float64 gradient checks.
    """

    kind = "tiny_test"

    def __init__(self, spec: ExtractorSpec):
        super().__init__()
        self.spec = spec
        self.normalize = _Normalize(spec.mean, spec.std)
        gen = torch.Generator().manual_seed(spec.seed)
        weights, biases = [], []
        in_ch = 3
        for out_ch in _TINY_CHANNELS:
            std = 1.0 / np.sqrt(in_ch * 9)
            w = torch.empty(out_ch, in_ch, 3, 3, dtype=torch.float64)
            w.normal_(0.0, std, generator=gen)
            b = torch.empty(out_ch, dtype=torch.float64)
            if spec.use_bias:
                b.normal_(0.0, 0.1, generator=gen)
            else:
                b.zero_()
            weights.append(w)
            biases.append(b)
            in_ch = out_ch
        for i, (w, b) in enumerate(zip(weights, biases)):
            self.register_buffer(f"weight_{i}", w)
            self.register_buffer(f"bias_{i}", b)

    @property
    def layer_names(self) -> tuple[str, ...]:
        return TINY_LAYER_NAMES

    def forward(self, x: torch.Tensor, taps: tuple[str, ...] | None = None) -> FeatureBundle:
        taps = taps if taps is not None else TINY_LAYER_NAMES
        batched = x.dim() == 4
        if not batched:
            x = x.unsqueeze(0)
        x = self.normalize(x)
        out: dict[str, torch.Tensor] = {}
        for i, name in enumerate(TINY_LAYER_NAMES):
            w = getattr(self, f"weight_{i}").to(x.dtype)
            b = getattr(self, f"bias_{i}").to(x.dtype)
            x = nn.functional.conv2d(x, w, b, stride=2, padding=1)
            if self.spec.activation == "tanh":
                x = torch.tanh(x)
            if name in taps:
                out[name] = x if batched else x.squeeze(0)
            if len(out) == len(taps):
                break
        return FeatureBundle(out)


class Vgg19Extractor(nn.Module):
    """VGG19 convolution stack, weights loaded from a local torchvision-format file."""

    kind = "pretrained_vgg19"

    def __init__(self, spec: ExtractorSpec):
        super().__init__()
        self.spec = spec
        self.normalize = _Normalize(spec.mean, spec.std)
        layers: list[nn.Module] = []
        self._tap_index: dict[str, int] = {}
        in_ch = 3
        block, idx = 1, 1
        for item in _VGG19_CFG:
            if item == "M":
                layers.append(nn.MaxPool2d(2, 2))
                block += 1
                idx = 1
            else:
                layers.append(nn.Conv2d(in_ch, item, 3, padding=1))
                layers.append(nn.ReLU(inplace=False))
                self._tap_index[f"conv{block}_{idx}"] = len(layers) - 1
                in_ch = item
                idx += 1
        self.features = nn.Sequential(*layers)
        self._load_weights(spec)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _load_weights(self, spec: ExtractorSpec):
        if spec.weights_path is None:
            raise ConfigError(
                "pretrained_vgg19 needs a weights file; set weights_path in the "
                f"extractor config (download from {VGG19_URL} and pass its path, "
                "or set the STYLEBACK_VGG19_WEIGHTS environment variable)"
            )
        path = Path(spec.weights_path)
        if not path.is_file():
            raise ConfigError(
                f"VGG19 weights file not found: {path}; download it with\n"
                f"  curl -o {path} {VGG19_URL}\n"
                "and point weights_path (or STYLEBACK_VGG19_WEIGHTS) at it"
            )
        if spec.weights_sha256 is not None:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != spec.weights_sha256:
                raise ConfigError(
                    f"checksum mismatch for {path}: expected {spec.weights_sha256}, "
                    f"got {digest}"
                )
        state = torch.load(path, map_location="cpu", weights_only=True)
        feature_state = {k: v for k, v in state.items() if k.startswith("features.")}
        expected = set(self.features.state_dict().keys())
        got = {k[len("features."):] for k in feature_state}
        if got != expected:
            raise ConfigError(
                f"weights file {path} does not match the VGG19 feature layout "
                f"(missing: {sorted(expected - got)[:3]}..., unexpected: {sorted(got - expected)[:3]}...)"
            )
        self.features.load_state_dict(
            {k[len("features."):]: v for k, v in feature_state.items()}
        )

    @property
    def layer_names(self) -> tuple[str, ...]:
        return VGG19_LAYER_NAMES

    def forward(self, x: torch.Tensor, taps: tuple[str, ...] | None = None) -> FeatureBundle:
        taps = taps if taps is not None else self.spec.tap_layers
        batched = x.dim() == 4
        if not batched:
            x = x.unsqueeze(0)
        if x.dtype != torch.float32:
            x = x.to(torch.float32)
        x = self.normalize(x)
        wanted = {self._tap_index[name]: name for name in taps}
        last = max(wanted) if wanted else -1
        out: dict[str, torch.Tensor] = {}
        for i, module in enumerate(self.features):
            x = module(x)
            if i in wanted:
                out[wanted[i]] = x if batched else x.squeeze(0)
            if i == last:
                break
        return FeatureBundle(out)


@lru_cache(maxsize=4)
def build_extractor(spec: ExtractorSpec) -> nn.Module:
    """Build (and cache) the extractor for a spec. Extractors are immutable
    after construction and safe to share across threads."""
    if spec.kind == "tiny_test":
        return TinyExtractor(spec)
    if spec.kind == "pretrained_vgg19":
        return Vgg19Extractor(spec)
    raise ArgumentError(f"unknown extractor kind {spec.kind!r}")


def image_to_tensor(image: ImageTensor, dtype: torch.dtype | None = None) -> torch.Tensor:
    """Unit-range ImageTensor -> (C, H, W) torch tensor."""
    unit = image.to_unit()
    dtype = dtype or (torch.float64 if unit.values.dtype == np.float64 else torch.float32)
    return torch.from_numpy(np.array(unit.values)).to(dtype)


def tensor_to_image(tensor: torch.Tensor) -> ImageTensor:
    """(C, H, W) torch tensor in [0, 1] -> unit-range ImageTensor."""
    arr = tensor.detach().cpu().numpy()
    return ImageTensor(arr, "unit")


def extract_features(image: ImageTensor | torch.Tensor, spec: ExtractorSpec,
                     layers: tuple[str, ...] | None = None) -> FeatureBundle:
    """Extract the spec's tap layers from a 3-channel unit-range image.

    Accepts a torch tensor directly so gradients can flow back to pixels.
    """
    if isinstance(image, ImageTensor):
        if image.channels != 3:
            raise ArgumentError(f"expected a 3-channel image, got {image.channels} channels")
        x = image_to_tensor(image)
    else:
        x = image
        if x.dim() != 3 or x.shape[0] != 3:
            raise ArgumentError(f"expected a (3, H, W) tensor, got shape {tuple(x.shape)}")
    taps = tuple(layers) if layers is not None else spec.tap_layers
    avail = available_layers(spec.kind)
    for name in taps:
        if name not in avail:
            raise ArgumentError(
                f"unknown layer {name!r} for {spec.kind}; available: {', '.join(avail)}"
            )
    extractor = build_extractor(spec)
    bundle = extractor(x, taps=taps)
    for name, feat in bundle.layers.items():
        if not torch.isfinite(feat).all():
            raise ArgumentError(f"non-finite features at layer {name}")
    return bundle
