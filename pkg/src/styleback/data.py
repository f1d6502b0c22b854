"""Image containers, dataset ingestion, and synthetic scene generation.

Images are stored channel-first (C, H, W) as floating point. The whole
package works in the unit range [0, 1]; GAN components convert to the
signed range [-1, 1] at their own boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ArgumentError, ConfigError

log = logging.getLogger(__name__)

UNIT = "unit"
SIGNED = "signed"
_RANGE_BOUNDS = {UNIT: (0.0, 1.0), SIGNED: (-1.0, 1.0)}

MIN_SIDE = 8
MASK_BINARIZE_THRESHOLD = 128  # robust to anti-aliased {0,255} masks

_RANGE_SLACK = 1e-6  # tolerated float overshoot before construction fails


def _freeze(values: np.ndarray) -> np.ndarray:
    out = np.array(values, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """A (C, H, W) float image in a declared value range."""

    values: np.ndarray
    range_tag: str = UNIT

    def __post_init__(self):
        if self.range_tag not in _RANGE_BOUNDS:
            raise ArgumentError(f"unknown range_tag {self.range_tag!r}")
        vals = np.asarray(self.values)
        if vals.ndim != 3:
            raise ArgumentError(f"expected (C, H, W) array, got shape {vals.shape}")
        c, h, w = vals.shape
        if c not in (1, 3):
            raise ArgumentError(f"channels must be 1 or 3, got {c}")
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ArgumentError(f"height and width must be >= {MIN_SIDE}, got {h}x{w}")
        if not np.issubdtype(vals.dtype, np.floating):
            raise ArgumentError(f"values must be floating point, got {vals.dtype}")
        if not np.all(np.isfinite(vals)):
            raise ArgumentError("image values must be finite")
        lo, hi = _RANGE_BOUNDS[self.range_tag]
        if vals.min() < lo - _RANGE_SLACK or vals.max() > hi + _RANGE_SLACK:
            raise ArgumentError(
                f"values outside {self.range_tag} range "
                f"[{lo}, {hi}]: min={vals.min()}, max={vals.max()}"
            )
        object.__setattr__(self, "values", _freeze(np.clip(vals, lo, hi)))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def to_unit(self) -> "ImageTensor":
        if self.range_tag == UNIT:
            return self
        return ImageTensor((self.values + 1.0) / 2.0, UNIT)

    def to_signed(self) -> "ImageTensor":
        if self.range_tag == SIGNED:
            return self
        return ImageTensor(self.values * 2.0 - 1.0, SIGNED)

    def to_range(self, range_tag: str) -> "ImageTensor":
        if range_tag == UNIT:
            return self.to_unit()
        if range_tag == SIGNED:
            return self.to_signed()
        raise ArgumentError(f"unknown range_tag {range_tag!r}")


@dataclass(frozen=True, eq=False)
class AnomalyMask:
    """Binary (H, W) ground truth: 1 = anomalous pixel."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ArgumentError(f"expected (H, W) array, got shape {vals.shape}")
        if not np.isin(vals, (0, 1)).all():
            raise ArgumentError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "values", _freeze(vals.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def anomaly_fraction(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True, eq=False)
class AnomalyScoreMap:
    """Per-pixel nonnegative anomaly scores in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ArgumentError(f"expected (H, W) array, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ArgumentError("score values must be finite")
        if vals.min() < -_RANGE_SLACK or vals.max() > 1.0 + _RANGE_SLACK:
            raise ArgumentError(
                f"scores outside [0, 1]: min={vals.min()}, max={vals.max()}"
            )
        object.__setattr__(self, "values", _freeze(np.clip(vals, 0.0, 1.0)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SceneRecord:
    scene_id: str
    image: ImageTensor
    mask: AnomalyMask | None = None
    split_tag: str = "eval"

    def __post_init__(self):
        if self.split_tag not in ("train", "eval"):
            raise ArgumentError(f"split_tag must be 'train' or 'eval', got {self.split_tag!r}")
        if self.mask is not None and (
            self.mask.height != self.image.height or self.mask.width != self.image.width
        ):
            raise ArgumentError(
                f"scene {self.scene_id!r}: mask {self.mask.height}x{self.mask.width} "
                f"does not match image {self.image.height}x{self.image.width}"
            )


# ---------------------------------------------------------------------------
# PNG round trip

def read_image_png(path: Path | str) -> ImageTensor:
    """Decode an 8-bit PNG to a unit-range RGB ImageTensor."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return ImageTensor(arr.transpose(2, 0, 1), UNIT)


def write_image_png(image: ImageTensor, path: Path | str) -> None:
    unit = image.to_unit()
    arr = np.rint(unit.values * 255.0).astype(np.uint8)
    if unit.channels == 1:
        Image.fromarray(arr[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def read_mask_png(path: Path | str) -> AnomalyMask:
    """Decode a single-channel {0, 255} PNG; values >= 128 become 1."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return AnomalyMask((arr >= MASK_BINARIZE_THRESHOLD).astype(np.uint8))


def write_mask_png(mask: AnomalyMask, path: Path | str) -> None:
    Image.fromarray((mask.values * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def write_score_map_png(score_map: AnomalyScoreMap, path: Path | str) -> None:
    """Score maps persist as 8-bit grayscale, value = round(255 * score)."""
    arr = np.rint(score_map.values * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_score_map_png(path: Path | str) -> AnomalyScoreMap:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return AnomalyScoreMap(arr)


# ---------------------------------------------------------------------------
# Dataset loading

@dataclass
class LoadSummary:
    scanned: int = 0
    loaded: int = 0
    unreadable: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return self.unreadable + len(self.errors)


class SceneDataset(list):
    """A list of SceneRecord with the load summary attached."""

    def __init__(self, records=(), summary: LoadSummary | None = None):
        super().__init__(records)
        self.summary = summary if summary is not None else LoadSummary()


def _iter_layout(root: Path, layout: str):
    """Yield (scene_id, split_tag, image_path, mask_path_or_None)."""
    if layout == "flat":
        images_dir = root / "images"
        if not images_dir.is_dir():
            raise ConfigError(f"missing images directory: {images_dir}")
        masks_dir = root / "masks"
        for img_path in sorted(images_dir.glob("*.png")):
            mask_path = masks_dir / img_path.name
            yield img_path.stem, "eval", img_path, mask_path if mask_path.is_file() else None
    elif layout == "cityscapes_like":
        images_dir = root / "leftImg8bit"
        if not images_dir.is_dir():
            raise ConfigError(f"missing leftImg8bit directory: {images_dir}")
        for img_path in sorted(images_dir.glob("*/*/*_leftImg8bit.png")):
            rel = img_path.relative_to(images_dir)
            split, city = rel.parts[0], rel.parts[1]
            scene_id = f"{city}/{img_path.name[:-len('_leftImg8bit.png')]}"
            split_tag = "train" if split == "train" else "eval"
            mask_path = root / "masks" / rel
            yield scene_id, split_tag, img_path, mask_path if mask_path.is_file() else None
    else:
        raise ArgumentError(f"unknown layout {layout!r}")


def load_dataset(root_path: Path | str, layout: str = "flat") -> SceneDataset:
    """Load scene/mask pairs from disk, sorted by scene_id.

    Unreadable files are skipped with a warning; image/mask dimension
    mismatches are recorded per scene. `result.summary` reconciles:
    loaded + skipped == scanned.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise ConfigError(f"dataset root does not exist: {root}")
    summary = LoadSummary()
    records = []
    seen: set[str] = set()
    for scene_id, split_tag, img_path, mask_path in _iter_layout(root, layout):
        summary.scanned += 1
        if scene_id in seen:
            summary.errors.append((scene_id, f"duplicate scene_id from {img_path}"))
            continue
        seen.add(scene_id)
        try:
            image = read_image_png(img_path)
        except Exception as exc:  # noqa: BLE001 - decode failures are data issues
            log.warning("skipping unreadable image %s: %s", img_path, exc)
            summary.unreadable += 1
            continue
        mask = None
        if mask_path is not None:
            try:
                mask = read_mask_png(mask_path)
            except Exception as exc:  # noqa: BLE001
                log.warning("skipping scene %s, unreadable mask %s: %s", scene_id, mask_path, exc)
                summary.unreadable += 1
                continue
            if mask.height != image.height or mask.width != image.width:
                summary.errors.append(
                    (scene_id,
                     f"mask {mask.height}x{mask.width} does not match "
                     f"image {image.height}x{image.width}")
                )
                continue
        records.append(SceneRecord(scene_id, image, mask, split_tag))
        summary.loaded += 1
    records.sort(key=lambda r: r.scene_id)
    return SceneDataset(records, summary)


# ---------------------------------------------------------------------------
# Synthetic scenes

BASE_PATTERNS = ("gradient", "stripes", "checker")
ANOMALY_SHAPES = ("none", "square", "disk")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    base_pattern: str
    anomaly_shape: str = "none"
    anomaly_fraction: float = 0.05
    seed: int = 0
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.base_pattern not in BASE_PATTERNS:
            raise ArgumentError(f"base_pattern must be one of {BASE_PATTERNS}")
        if self.anomaly_shape not in ANOMALY_SHAPES:
            raise ArgumentError(f"anomaly_shape must be one of {ANOMALY_SHAPES}")
        if not 0.0 < self.anomaly_fraction <= 0.2:
            raise ArgumentError(
                f"anomaly_fraction must be in (0, 0.2], got {self.anomaly_fraction}"
            )
        if self.height < MIN_SIDE or self.width < MIN_SIDE:
            raise ArgumentError(f"height and width must be >= {MIN_SIDE}")


def _render_base(pattern: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Seed-varied base pattern so synthetic domains have sample diversity."""
    xs = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :].repeat(h, axis=0)
    ys = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None].repeat(w, axis=1)
    if pattern == "gradient":
        theta = rng.uniform(0.0, 2.0 * np.pi)
        ramp = xs * np.cos(theta) + ys * np.sin(theta)
        lo, hi = ramp.min(), ramp.max()
        t = ((ramp - lo) / max(hi - lo, 1e-9)).astype(np.float32)
        return np.stack([t, 1.0 - t, np.abs(t - 0.5) * 0.8 + 0.1])
    if pattern == "stripes":
        period = int(rng.choice([6, 8, 10]))
        phase = int(rng.integers(0, period))
        horizontal = bool(rng.integers(0, 2))
        axis = np.arange(h) if horizontal else np.arange(w)
        stripe = (((axis + phase) // period) % 2).astype(np.float32)
        plane = stripe[:, None].repeat(w, axis=1) if horizontal \
            else np.tile(stripe, (h, 1))
        row = 0.2 + 0.6 * plane
        return np.stack([row, row * 0.8 + 0.1, row * 0.6 + 0.2]).astype(np.float32)
    # checker
    cell = int(rng.choice([6, 8, 10]))
    oy = int(rng.integers(0, cell))
    ox = int(rng.integers(0, cell))
    board = ((((np.arange(h) + oy)[:, None] // cell)
              + ((np.arange(w) + ox)[None, :] // cell)) % 2)
    plane = (0.25 + 0.5 * board).astype(np.float32)
    return np.stack([plane, 1.0 - plane, np.full((h, w), 0.5, dtype=np.float32)])


def _anomaly_footprint(shape: str, fraction: float, h: int, w: int,
                       rng: np.random.Generator) -> np.ndarray:
    target = fraction * h * w
    mask = np.zeros((h, w), dtype=np.uint8)
    if shape == "square":
        side = max(1, int(round(np.sqrt(target))))
        side = min(side, h, w)
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        mask[top:top + side, left:left + side] = 1
    else:  # disk
        radius = max(1.0, np.sqrt(target / np.pi))
        r_int = int(np.ceil(radius))
        cy = int(rng.integers(r_int, max(r_int + 1, h - r_int)))
        cx = int(rng.integers(r_int, max(r_int + 1, w - r_int)))
        yy, xx = np.ogrid[:h, :w]
        mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = 1
    return mask


def synthesize_scene(spec: SyntheticSceneSpec, split_tag: str = "eval") -> SceneRecord:
    """Render a deterministic synthetic scene with an optional anomaly.

    Anomaly pixels are shifted by 0.4 away from the base pattern in every
    channel, so they are clearly visible and the mask is exactly the set
    of deviating pixels.
    """
    rng = np.random.default_rng(spec.seed)
    base = _render_base(spec.base_pattern, spec.height, spec.width, rng)
    if spec.anomaly_shape == "none":
        mask = np.zeros((spec.height, spec.width), dtype=np.uint8)
        values = base
    else:
        mask = _anomaly_footprint(
            spec.anomaly_shape, spec.anomaly_fraction, spec.height, spec.width, rng
        )
        shift = np.where(base < 0.5, 0.4, -0.4).astype(np.float32)
        values = np.where(mask[None, :, :] == 1, base + shift, base)
    scene_id = (
        f"syn-{spec.base_pattern}-{spec.anomaly_shape}-{spec.seed:05d}"
    )
    return SceneRecord(scene_id, ImageTensor(values, UNIT), AnomalyMask(mask), split_tag)


# ---------------------------------------------------------------------------
# Resampling

def resize(image: ImageTensor, new_h: int, new_w: int) -> ImageTensor:
    """Bilinear resize with half-pixel-aligned sample centers, no anti-alias.

    Resizing to the original size reproduces the input exactly.
    """
    if new_h <= 0 or new_w <= 0:
        raise ArgumentError(f"target size must be positive, got {new_h}x{new_w}")
    if new_h < MIN_SIDE or new_w < MIN_SIDE:
        raise ArgumentError(f"target size must be >= {MIN_SIDE}, got {new_h}x{new_w}")
    vals = image.values.astype(np.float64)
    c, h, w = vals.shape

    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    top = vals[:, y0c[:, None], x0c[None, :]] * (1 - fx)[None, None, :] \
        + vals[:, y0c[:, None], x1c[None, :]] * fx[None, None, :]
    bottom = vals[:, y1c[:, None], x0c[None, :]] * (1 - fx)[None, None, :] \
        + vals[:, y1c[:, None], x1c[None, :]] * fx[None, None, :]
    out = top * (1 - fy)[None, :, None] + bottom * fy[None, :, None]
    return ImageTensor(out.astype(image.values.dtype), image.range_tag)


def resize_mask(mask: AnomalyMask, new_h: int, new_w: int) -> AnomalyMask:
    """Nearest-neighbor mask resize (labels must stay binary)."""
    ys = np.clip(((np.arange(new_h) + 0.5) * (mask.height / new_h) - 0.5).round(), 0, mask.height - 1).astype(np.int64)
    xs = np.clip(((np.arange(new_w) + 0.5) * (mask.width / new_w) - 0.5).round(), 0, mask.width - 1).astype(np.int64)
    return AnomalyMask(mask.values[ys[:, None], xs[None, :]])
