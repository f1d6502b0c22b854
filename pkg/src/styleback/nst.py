"""Neural style transfer: Gram matrices, the weighted composite loss, and
the pixel-space optimization loop with controllable style weight.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .data import ImageTensor, write_image_png
from .exceptions import ArgumentError, NumericError, StylebackError
from .features import (
    ExtractorSpec,
    FeatureBundle,
    build_extractor,
    image_to_tensor,
    tensor_to_image,
)

WEIGHT_SUM_TOL = 1e-6


@dataclass(frozen=True)
class NSTParams:
    extractor: ExtractorSpec
    content_weight: float = 1e5
    style_weight: float = 1e5
    iterations: int = 300
    step_size: float = 0.02
    init: str = "content"
    seed: int = 0

    def __post_init__(self):
        if not self.content_weight > 0:
            raise ArgumentError(f"content_weight must be positive, got {self.content_weight}")
        if self.style_weight < 0:
            raise ArgumentError(f"style_weight must be nonnegative, got {self.style_weight}")
        if self.iterations < 1:
            raise ArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if not self.step_size > 0:
            raise ArgumentError(f"step_size must be positive, got {self.step_size}")
        if self.init not in ("content", "noise"):
            raise ArgumentError(f"init must be 'content' or 'noise', got {self.init!r}")


class TraceEntry(NamedTuple):
    iteration: int
    content_loss: float
    style_loss: float
    total_loss: float


@dataclass
class NSTResult:
    output: ImageTensor
    loss_trace: list[TraceEntry]
    best_total_loss: float


def gram_matrix(features):
    """G[i, j] = sum over positions of F[i] * F[j], normalized by C*H*W.

    Symmetric by construction and positive semidefinite. Accepts a torch
    tensor (differentiable) or a numpy array.
    """
    if isinstance(features, np.ndarray):
        return gram_matrix(torch.from_numpy(features)).numpy()
    if features.dim() != 3:
        raise ArgumentError(f"expected (C, H, W) features, got shape {tuple(features.shape)}")
    if not torch.isfinite(features).all():
        raise NumericError("non-finite feature values in gram_matrix")
    c, h, w = features.shape
    flat = features.reshape(c, h * w)
    g = flat @ flat.T / (c * h * w)
    return 0.5 * (g + g.T)


def content_loss(generated: FeatureBundle, content: FeatureBundle,
                 layers: Sequence[str]) -> torch.Tensor:
    """Mean over layers of the per-layer feature MSE."""
    if not layers:
        raise ArgumentError("content_loss needs at least one layer")
    total = None
    for name in layers:
        gen, ref = generated[name], content[name]
        if gen.shape != ref.shape:
            raise ArgumentError(
                f"layer {name}: shape mismatch {tuple(gen.shape)} vs {tuple(ref.shape)}"
            )
        mse = torch.mean((gen - ref) ** 2)
        total = mse if total is None else total + mse
    return total / len(layers)


def style_loss(generated: FeatureBundle, style_grams: dict[str, torch.Tensor],
               layer_weights: dict[str, float]) -> torch.Tensor:
    """Weighted sum over layers of the Gram-matrix MSE; weights must sum to 1."""
    weight_sum = sum(layer_weights.values())
    if abs(weight_sum - 1.0) > WEIGHT_SUM_TOL:
        raise ArgumentError(f"layer weights must sum to 1, got {weight_sum}")
    total = None
    for name, weight in layer_weights.items():
        if name not in style_grams:
            raise ArgumentError(f"no style gram for layer {name!r}")
        g = gram_matrix(generated[name])
        ref = style_grams[name]
        if g.shape != ref.shape:
            raise ArgumentError(
                f"layer {name}: gram shape mismatch {tuple(g.shape)} vs {tuple(ref.shape)}"
            )
        term = weight * torch.mean((g - ref) ** 2)
        total = term if total is None else total + term
    return total


def uniform_layer_weights(layers: Sequence[str]) -> dict[str, float]:
    return {name: 1.0 / len(layers) for name in layers}


def style_grams_of(image: ImageTensor | torch.Tensor, spec: ExtractorSpec,
                   extractor=None) -> dict[str, torch.Tensor]:
    """Precompute detached style Gram matrices for the spec's style layers."""
    ext = extractor if extractor is not None else build_extractor(spec)
    x = image_to_tensor(image) if isinstance(image, ImageTensor) else image
    bundle = ext(x, taps=spec.style_layers)
    return {name: gram_matrix(bundle[name]).detach() for name in spec.style_layers}


def nst_optimize(content: ImageTensor, style: ImageTensor, params: NSTParams,
                 extractor=None) -> NSTResult:
    """Optimize pixels to trade content fidelity against style similarity.

    Adam with a fixed step size on the raw pixels, clamped to [0, 1] after
    every step; returns the best-loss iterate, not the last one. The loss
    trace holds one entry per visited iterate, including the final state.
    """
    if content.channels != 3 or style.channels != 3:
        raise ArgumentError("content and style images must be 3-channel")
    ext = extractor if extractor is not None else build_extractor(params.extractor)
    spec = params.extractor
    dtype = torch.float64 if content.values.dtype == np.float64 else torch.float32

    x_content = image_to_tensor(content, dtype)
    content_ref = FeatureBundle({
        name: t.detach()
        for name, t in ext(x_content, taps=spec.content_layers).layers.items()
    })
    grams = {
        name: g.to(dtype)
        for name, g in style_grams_of(style.to_unit(), spec, extractor=ext).items()
    }
    layer_weights = uniform_layer_weights(spec.style_layers)

    if params.init == "content":
        pixels = x_content.clone()
    else:
        gen = torch.Generator().manual_seed(params.seed)
        pixels = torch.rand(x_content.shape, generator=gen, dtype=dtype)
    pixels.requires_grad_(True)
    optimizer = torch.optim.Adam([pixels], lr=params.step_size)

    cw, sw = params.content_weight, params.style_weight
    trace: list[TraceEntry] = []
    best_total = float("inf")
    best_pixels = pixels.detach().clone()

    def evaluate():
        feats = ext(pixels, taps=spec.tap_layers)
        lc = content_loss(feats, content_ref, spec.content_layers)
        ls = style_loss(feats, grams, layer_weights)
        total = cw * lc if sw == 0.0 else cw * lc + sw * ls
        return lc, ls, total

    for it in range(params.iterations + 1):
        lc_t, ls_t, total_t = evaluate()
        lc, ls = lc_t.detach().item(), ls_t.detach().item()
        total = cw * lc + sw * ls
        if not np.isfinite(total):
            raise NumericError(f"non-finite total loss at iteration {it}")
        trace.append(TraceEntry(it, lc, ls, total))
        if total < best_total:
            best_total = total
            best_pixels = pixels.detach().clone()
        if it == params.iterations:
            break
        optimizer.zero_grad()
        total_t.backward()
        optimizer.step()
        with torch.no_grad():
            pixels.clamp_(0.0, 1.0)

    return NSTResult(tensor_to_image(best_pixels), trace, best_total)


def style_weight_sweep(content: ImageTensor, style: ImageTensor, base: NSTParams,
                       weights: Sequence[float]) -> list[NSTResult]:
    """Run the same seeded optimization once per style weight, in order."""
    if not weights:
        raise ArgumentError("weights must be nonempty")
    if any(b <= a for a, b in zip(weights, weights[1:])):
        raise ArgumentError(f"weights must be strictly increasing, got {list(weights)}")
    results = []
    for weight in weights:
        params = replace(base, style_weight=weight)
        try:
            results.append(nst_optimize(content, style, params))
        except StylebackError as exc:
            raise type(exc)(f"style_weight={weight:g}: {exc}") from exc
    return results


def write_loss_trace_csv(result: NSTResult, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "content_loss", "style_loss", "total_loss"])
        for entry in result.loss_trace:
            writer.writerow([entry.iteration, repr(entry.content_loss),
                             repr(entry.style_loss), repr(entry.total_loss)])


def save_stylized(result: NSTResult, params: NSTParams, png_path: Path | str) -> None:
    """Write the stylized PNG with a JSON sidecar recording the parameters."""
    png_path = Path(png_path)
    write_image_png(result.output, png_path)
    sidecar = png_path.with_suffix(".json")
    payload = asdict(params)
    payload["best_total_loss"] = result.best_total_loss
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True))
