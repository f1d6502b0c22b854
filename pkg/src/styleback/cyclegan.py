"""Unpaired image translation: residual generators, patch discriminators,
cycle-consistent training with an image history buffer, and checkpointing.

Images cross this module's boundary in unit range; internally everything
runs in the signed [-1, 1] range that the tanh output head produces.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import ImageTensor, SceneRecord, resize
from .exceptions import ArgumentError, ConfigError, NumericError
from .features import image_to_tensor, tensor_to_image

log = logging.getLogger(__name__)

# Named training regimes: group id -> (source domain, target domain).
GROUP_DOMAINS = {
    "A": ("van_gogh_paintings", "kitti"),
    "B": ("van_gogh_paintings", "kitti_plus_photos"),
    "C": ("ukiyoe_paintings", "kitti"),
    "D": ("ukiyoe_paintings", "kitti_plus_photos"),
    "E": ("van_gogh_stylized_kitti", "kitti"),
    "F": ("van_gogh_stylized_cityscapes", "cityscapes"),
}

DIRECTIONS = ("a_to_b", "b_to_a")
HISTORY_BUFFER_SIZE = 50


@dataclass(frozen=True)
class ArchSpec:
    base_channels: int = 32
    n_residual_blocks: int = 3
    image_size: int = 64

    def __post_init__(self):
        if not 2 <= self.n_residual_blocks <= 6:
            raise ArgumentError(
                f"n_residual_blocks must be in [2, 6], got {self.n_residual_blocks}"
            )
        if self.base_channels < 4:
            raise ArgumentError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.image_size < 16 or self.image_size % 4 != 0:
            raise ArgumentError(
                f"image_size must be >= 16 and divisible by 4, got {self.image_size}"
            )


@dataclass(frozen=True)
class TrainingGroupConfig:
    group_id: str
    source_domain: str
    target_domain: str
    epochs: int
    batch_size: int = 1
    learning_rate: float = 2e-4
    lambda_cycle: float = 10.0
    lambda_identity: float | None = None  # defaults to 0.5 * lambda_cycle
    seed: int = 0
    arch: ArchSpec = field(default_factory=ArchSpec)
    source_path: str | None = None
    target_path: str | None = None

    def __post_init__(self):
        if self.group_id in GROUP_DOMAINS:
            expected = GROUP_DOMAINS[self.group_id]
            if (self.source_domain, self.target_domain) != expected:
                raise ConfigError(
                    f"group {self.group_id} requires domains {expected}, "
                    f"got ({self.source_domain!r}, {self.target_domain!r})"
                )
        elif self.group_id != "toy":
            raise ConfigError(f"unknown training group {self.group_id!r}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.lambda_cycle > 0:
            raise ArgumentError(f"lambda_cycle must be positive, got {self.lambda_cycle}")
        if self.lambda_identity is None:
            object.__setattr__(self, "lambda_identity", 0.5 * self.lambda_cycle)
        if self.lambda_identity < 0:
            raise ArgumentError(f"lambda_identity must be >= 0, got {self.lambda_identity}")


def group_config(group_id: str, epochs: int, **overrides) -> TrainingGroupConfig:
    """Build a config with the group's canonical domain pairing filled in."""
    source, target = GROUP_DOMAINS.get(group_id, ("toy_source", "toy_target"))
    defaults = dict(group_id=group_id, source_domain=source, target_domain=target,
                    epochs=epochs)
    defaults.update(overrides)
    return TrainingGroupConfig(**defaults)


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """c7s1-k / d / R / u residual generator; tanh output keeps values in [-1, 1]."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        base = arch.base_channels
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, base, 7),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
        ]
        ch = base
        for _ in range(2):
            layers += [
                nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(ch * 2),
                nn.ReLU(inplace=True),
            ]
            ch *= 2
        layers += [_ResidualBlock(ch) for _ in range(arch.n_residual_blocks)]
        for _ in range(2):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, ch // 2, 3, padding=1),
                nn.InstanceNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, 3, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class Discriminator(nn.Module):
    """PatchGAN with three stride-2 downsampling layers."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        base = arch.base_channels
        self.model = nn.Sequential(
            nn.Conv2d(3, base, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.InstanceNorm2d(base * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 2, base * 4, 4, stride=2, padding=1),
            nn.InstanceNorm2d(base * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 4, 1, 4, padding=1),
        )

    def forward(self, x):
        return self.model(x)


@dataclass
class TrainingMeta:
    group_id: str
    epochs_completed: int
    seed: int


@dataclass
class TranslationModel:
    gen_ab: Generator
    gen_ba: Generator
    disc_a: Discriminator
    disc_b: Discriminator
    arch: ArchSpec
    training_meta: TrainingMeta
    history: list[dict] = field(default_factory=list)

    def generators(self):
        return [self.gen_ab, self.gen_ba]

    def discriminators(self):
        return [self.disc_a, self.disc_b]


def _init_weights(module: nn.Module, gen: torch.Generator) -> None:
    # Fixed iteration order over named parameters keeps init reproducible.
    for _, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if param.dim() >= 2:
                param.normal_(0.0, 0.02, generator=gen)
            else:
                param.zero_()


def build_model(arch: ArchSpec, seed: int, group_id: str = "toy") -> TranslationModel:
    gen = torch.Generator().manual_seed(seed)
    nets = [Generator(arch), Generator(arch), Discriminator(arch), Discriminator(arch)]
    for net in nets:
        _init_weights(net, gen)
        net.train()
    return TranslationModel(*nets, arch=arch,
                            training_meta=TrainingMeta(group_id, 0, seed))


# ---------------------------------------------------------------------------
# Losses

def cycle_consistency_loss(x: ImageTensor, x_reconstructed: ImageTensor) -> float:
    """Mean absolute difference, evaluated in the first argument's range."""
    if (x.height, x.width, x.channels) != (
        x_reconstructed.height, x_reconstructed.width, x_reconstructed.channels
    ):
        raise ArgumentError(
            f"shape mismatch: {x.values.shape} vs {x_reconstructed.values.shape}"
        )
    recon = x_reconstructed.to_range(x.range_tag)
    return float(np.mean(np.abs(
        x.values.astype(np.float64) - recon.values.astype(np.float64)
    )))


def adversarial_losses(disc_outputs_real, disc_outputs_fake):
    """Least-squares GAN objectives.

    disc_loss = 0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)
    gen_loss  = mean((fake - 1)^2)
    """
    numpy_in = isinstance(disc_outputs_real, np.ndarray)
    real = torch.as_tensor(disc_outputs_real, dtype=torch.float64) if numpy_in \
        else disc_outputs_real
    fake = torch.as_tensor(disc_outputs_fake, dtype=torch.float64) if numpy_in \
        else disc_outputs_fake
    if not (torch.isfinite(real).all() and torch.isfinite(fake).all()):
        raise NumericError("non-finite discriminator outputs")
    gen_loss = torch.mean((fake - 1.0) ** 2)
    disc_loss = 0.5 * torch.mean((real - 1.0) ** 2) + 0.5 * torch.mean(fake ** 2)
    if numpy_in:
        return float(gen_loss), float(disc_loss)
    return gen_loss, disc_loss


class ImageHistoryBuffer:
    """Pool of previously generated images used for discriminator updates."""

    def __init__(self, rng: np.random.Generator, max_size: int = HISTORY_BUFFER_SIZE):
        self.rng = rng
        self.max_size = max_size
        self.images: list[torch.Tensor] = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        out = []
        for image in batch:
            image = image.unsqueeze(0)
            if len(self.images) < self.max_size:
                self.images.append(image)
                out.append(image)
            elif self.rng.random() > 0.5:
                idx = int(self.rng.integers(0, self.max_size))
                out.append(self.images[idx].clone())
                self.images[idx] = image
            else:
                out.append(image)
        return torch.cat(out)


# ---------------------------------------------------------------------------
# Training

def _to_signed_tensor(record: SceneRecord, size: int) -> torch.Tensor:
    image = record.image.to_unit()
    if (image.height, image.width) != (size, size):
        image = resize(image, size, size)
    return image_to_tensor(image, torch.float32) * 2.0 - 1.0


def _epoch_order(rng: np.random.Generator, n_items: int, n_total: int) -> np.ndarray:
    reps = int(np.ceil(n_total / n_items))
    idx = np.concatenate([rng.permutation(n_items) for _ in range(reps)])
    return idx[:n_total]


def train(group: TrainingGroupConfig,
          source_data: Sequence[SceneRecord],
          target_data: Sequence[SceneRecord],
          checkpoint_dir: Path | str | None = None,
          checkpoint_every: int = 0,
          log_path: Path | str | None = None) -> TranslationModel:
    """Train both generator/discriminator pairs on unpaired domains.

    Domain A is the source (stylized/painting) domain, domain B the target
    (road-scene) domain. Deterministic given the seed and the data order;
    non-finite losses abort with the last written checkpoint retained.
    """
    if not source_data or not target_data:
        raise ConfigError("both source and target datasets must be nonempty")
    arch = group.arch
    model = build_model(arch, group.seed, group.group_id)
    a_pool = torch.stack([_to_signed_tensor(r, arch.image_size) for r in source_data])
    b_pool = torch.stack([_to_signed_tensor(r, arch.image_size) for r in target_data])

    rng = np.random.default_rng(group.seed)
    buffer_a = ImageHistoryBuffer(rng)
    buffer_b = ImageHistoryBuffer(rng)
    opt_g = torch.optim.Adam(
        list(model.gen_ab.parameters()) + list(model.gen_ba.parameters()),
        lr=group.learning_rate, betas=(0.5, 0.999))
    opt_da = torch.optim.Adam(model.disc_a.parameters(), lr=group.learning_rate,
                              betas=(0.5, 0.999))
    opt_db = torch.optim.Adam(model.disc_b.parameters(), lr=group.learning_rate,
                              betas=(0.5, 0.999))

    n_total = max(len(a_pool), len(b_pool))
    last_checkpoint: Path | None = None
    lam_cyc, lam_id = group.lambda_cycle, group.lambda_identity

    def fail(epoch: int, step: int):
        kept = f"; last good checkpoint: {last_checkpoint}" if last_checkpoint else ""
        raise NumericError(f"training diverged at epoch {epoch}, step {step}{kept}")

    for epoch in range(1, group.epochs + 1):
        order_a = _epoch_order(rng, len(a_pool), n_total)
        order_b = _epoch_order(rng, len(b_pool), n_total)
        sums = {"gen_loss": 0.0, "disc_loss": 0.0, "cycle_loss": 0.0, "identity_loss": 0.0}
        n_steps = 0
        for start in range(0, n_total, group.batch_size):
            real_a = a_pool[order_a[start:start + group.batch_size]]
            real_b = b_pool[order_b[start:start + group.batch_size]]

            # generators
            opt_g.zero_grad()
            fake_b = model.gen_ab(real_a)
            fake_a = model.gen_ba(real_b)
            adv_ab, _ = adversarial_losses(model.disc_b(real_b), model.disc_b(fake_b))
            adv_ba, _ = adversarial_losses(model.disc_a(real_a), model.disc_a(fake_a))
            adv = 0.5 * (adv_ab + adv_ba)
            cycle = 0.5 * (
                torch.mean(torch.abs(model.gen_ba(fake_b) - real_a))
                + torch.mean(torch.abs(model.gen_ab(fake_a) - real_b))
            )
            if lam_id > 0:
                identity = 0.5 * (
                    torch.mean(torch.abs(model.gen_ab(real_b) - real_b))
                    + torch.mean(torch.abs(model.gen_ba(real_a) - real_a))
                )
            else:
                identity = torch.zeros(())
            loss_g = adv + lam_cyc * cycle + lam_id * identity
            if not torch.isfinite(loss_g):
                fail(epoch, n_steps)
            loss_g.backward()
            opt_g.step()

            # discriminators, fed from the history buffers
            fake_a_hist = buffer_a.query(fake_a.detach())
            fake_b_hist = buffer_b.query(fake_b.detach())
            opt_da.zero_grad()
            _, loss_da = adversarial_losses(model.disc_a(real_a), model.disc_a(fake_a_hist))
            loss_da.backward()
            opt_da.step()
            opt_db.zero_grad()
            _, loss_db = adversarial_losses(model.disc_b(real_b), model.disc_b(fake_b_hist))
            loss_db.backward()
            opt_db.step()
            loss_d = 0.5 * (loss_da + loss_db)
            if not torch.isfinite(loss_d):
                fail(epoch, n_steps)

            sums["gen_loss"] += loss_g.detach().item()
            sums["disc_loss"] += loss_d.detach().item()
            sums["cycle_loss"] += cycle.detach().item()
            sums["identity_loss"] += identity.detach().item()
            n_steps += 1

        row = {"epoch": epoch, **{k: v / n_steps for k, v in sums.items()}}
        model.history.append(row)
        model.training_meta.epochs_completed = epoch
        log.info("epoch %d: %s", epoch,
                 ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
        if checkpoint_dir is not None and checkpoint_every > 0 and (
            epoch % checkpoint_every == 0 or epoch == group.epochs
        ):
            path = Path(checkpoint_dir) / f"{group.group_id}_epoch{epoch:04d}.pt"
            save_checkpoint(model, path)
            last_checkpoint = path

    if log_path is not None:
        write_training_log_csv(model.history, log_path)
    for net in (*model.generators(), *model.discriminators()):
        net.eval()
    return model


def write_training_log_csv(history: Sequence[dict], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "gen_loss", "disc_loss", "cycle_loss", "identity_loss"])
        for row in history:
            writer.writerow([row["epoch"], row["gen_loss"], row["disc_loss"],
                             row["cycle_loss"], row["identity_loss"]])


# ---------------------------------------------------------------------------
# Inference and checkpoints

def translate(model: TranslationModel, image: ImageTensor, direction: str) -> ImageTensor:
    """Single deterministic generator pass; unit range in, unit range out."""
    if direction not in DIRECTIONS:
        raise ArgumentError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    size = model.arch.image_size
    if (image.height, image.width) != (size, size):
        raise ArgumentError(
            f"image must be resized to the model's {size}x{size} input, "
            f"got {image.height}x{image.width}"
        )
    generator = model.gen_ab if direction == "a_to_b" else model.gen_ba
    generator.eval()
    x = image_to_tensor(image.to_unit(), torch.float32) * 2.0 - 1.0
    with torch.no_grad():
        out = generator(x.unsqueeze(0)).squeeze(0).clamp(-1.0, 1.0)
    return tensor_to_image((out + 1.0) / 2.0)


def round_trip(model: TranslationModel, image: ImageTensor, start_domain: str) -> ImageTensor:
    """Translate to the other domain and back."""
    if start_domain == "a":
        return translate(model, translate(model, image, "a_to_b"), "b_to_a")
    if start_domain == "b":
        return translate(model, translate(model, image, "b_to_a"), "a_to_b")
    raise ArgumentError(f"start_domain must be 'a' or 'b', got {start_domain!r}")


def mean_cycle_loss(model: TranslationModel, records: Sequence[SceneRecord],
                    start_domain: str) -> float:
    """Mean unit-range round-trip error over a split."""
    if not records:
        raise ArgumentError("records must be nonempty")
    size = model.arch.image_size
    total = 0.0
    for record in records:
        image = record.image.to_unit()
        if (image.height, image.width) != (size, size):
            image = resize(image, size, size)
        total += cycle_consistency_loss(image, round_trip(model, image, start_domain))
    return total / len(records)


def _model_state(model: TranslationModel) -> dict:
    return {
        "gen_ab": model.gen_ab.state_dict(),
        "gen_ba": model.gen_ba.state_dict(),
        "disc_a": model.disc_a.state_dict(),
        "disc_b": model.disc_b.state_dict(),
    }


def save_checkpoint(model: TranslationModel, path: Path | str) -> Path:
    """Write the parameter blob plus a JSON sidecar with arch, meta, and checksum."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(_model_state(model), path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    sidecar = {
        "arch": {
            "base_channels": model.arch.base_channels,
            "n_residual_blocks": model.arch.n_residual_blocks,
            "image_size": model.arch.image_size,
        },
        "group_id": model.training_meta.group_id,
        "epoch": model.training_meta.epochs_completed,
        "seed": model.training_meta.seed,
        "sha256": digest,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: Path | str) -> TranslationModel:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    if not path.is_file() or not sidecar_path.is_file():
        raise ConfigError(f"checkpoint or sidecar missing: {path}")
    sidecar = json.loads(sidecar_path.read_text())
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    if digest != sidecar["sha256"]:
        raise ConfigError(f"checkpoint {path} does not match its recorded checksum")
    arch = ArchSpec(**sidecar["arch"])
    model = build_model(arch, sidecar["seed"], sidecar["group_id"])
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.gen_ab.load_state_dict(state["gen_ab"])
    model.gen_ba.load_state_dict(state["gen_ba"])
    model.disc_a.load_state_dict(state["disc_a"])
    model.disc_b.load_state_dict(state["disc_b"])
    model.training_meta.epochs_completed = sidecar["epoch"]
    for net in (*model.generators(), *model.discriminators()):
        net.eval()
    return model
