"""Figure grids: labeled rows of pipeline images with optional red
mask-boundary overlays, composed deterministically without a plotting
backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data import AnomalyMask, AnomalyScoreMap, ImageTensor
from .exceptions import ArgumentError

CELL_PAD = 4
LABEL_GUTTER_LEFT = 96
LABEL_GUTTER_TOP = 18
OVERLAY_COLOR = (1.0, 0.0, 0.0)


def mask_boundary(mask: AnomalyMask) -> np.ndarray:
    """Inner 1-pixel boundary: mask pixels with a 4-neighbor outside the
    mask (image borders count as outside)."""
    m = mask.values.astype(bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return (m & ~interior).astype(np.uint8)


def overlay_mask_boundary(image: ImageTensor, mask: AnomalyMask) -> ImageTensor:
    """Paint exactly the mask-boundary pixels red."""
    if (mask.height, mask.width) != (image.height, image.width):
        raise ArgumentError(
            f"mask {mask.height}x{mask.width} does not match image "
            f"{image.height}x{image.width}"
        )
    unit = image.to_unit()
    vals = np.array(unit.values)
    if vals.shape[0] == 1:
        vals = np.repeat(vals, 3, axis=0)
    boundary = mask_boundary(mask).astype(bool)
    for ch, value in enumerate(OVERLAY_COLOR):
        plane = vals[ch]
        plane[boundary] = value
    return ImageTensor(vals, "unit")


def _cell_to_rgb(cell) -> np.ndarray:
    """Any supported cell type -> (H, W, 3) uint8."""
    if isinstance(cell, AnomalyScoreMap):
        gray = np.rint(cell.values * 255.0).astype(np.uint8)
        return np.stack([gray] * 3, axis=-1)
    if isinstance(cell, ImageTensor):
        unit = cell.to_unit()
        arr = np.rint(unit.values * 255.0).astype(np.uint8)
        if arr.shape[0] == 1:
            arr = np.repeat(arr, 3, axis=0)
        return arr.transpose(1, 2, 0)
    raise ArgumentError(f"unsupported cell type {type(cell).__name__}")


def render_grid(rows: Sequence[Sequence[ImageTensor | AnomalyScoreMap]],
                row_labels: Sequence[str] | None = None,
                col_labels: Sequence[str] | None = None,
                highlight_masks: Sequence[AnomalyMask | None] | None = None,
                highlight_columns: Sequence[int] | None = None) -> np.ndarray:
    """Compose rows of images into one labeled (H, W, 3) uint8 canvas.

    When a row has a highlight mask, its boundary is drawn in red on the
    designated columns (all image columns by default).
    """
    if not rows or any(not row for row in rows):
        raise ArgumentError("rows must be nonempty lists of images")
    if row_labels is not None and len(row_labels) != len(rows):
        raise ArgumentError("row_labels length must match rows")
    if highlight_masks is not None and len(highlight_masks) != len(rows):
        raise ArgumentError("highlight_masks length must match rows")
    n_cols = max(len(row) for row in rows)
    if col_labels is not None and len(col_labels) != n_cols:
        raise ArgumentError("col_labels length must match the column count")

    cells: list[list[np.ndarray]] = []
    for r, row in enumerate(rows):
        heights = {c.height for c in row}
        if len(heights) != 1:
            raise ArgumentError(f"row {r}: images must share one height, got {sorted(heights)}")
        rendered = []
        for c, cell in enumerate(row):
            mask = highlight_masks[r] if highlight_masks is not None else None
            if (
                mask is not None
                and isinstance(cell, ImageTensor)
                and (highlight_columns is None or c in highlight_columns)
                and (mask.height, mask.width) == (cell.height, cell.width)
            ):
                cell = overlay_mask_boundary(cell, mask)
            rendered.append(_cell_to_rgb(cell))
        cells.append(rendered)

    cell_h = max(c.shape[0] for row in cells for c in row)
    cell_w = max(c.shape[1] for row in cells for c in row)
    left = LABEL_GUTTER_LEFT if row_labels is not None else CELL_PAD
    top = LABEL_GUTTER_TOP if col_labels is not None else CELL_PAD
    height = top + len(rows) * (cell_h + CELL_PAD) + CELL_PAD
    width = left + n_cols * (cell_w + CELL_PAD) + CELL_PAD
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)

    for r, row in enumerate(cells):
        y0 = top + CELL_PAD + r * (cell_h + CELL_PAD)
        for c, cell in enumerate(row):
            x0 = left + CELL_PAD + c * (cell_w + CELL_PAD)
            canvas[y0:y0 + cell.shape[0], x0:x0 + cell.shape[1]] = cell

    if row_labels is not None or col_labels is not None:
        img = Image.fromarray(canvas)
        draw = ImageDraw.Draw(img)
        font = ImageFont.load_default()
        if row_labels is not None:
            for r, label in enumerate(row_labels):
                y0 = top + CELL_PAD + r * (cell_h + CELL_PAD)
                draw.text((2, y0 + cell_h // 2 - 5), label, fill=(0, 0, 0), font=font)
        if col_labels is not None:
            for c, label in enumerate(col_labels):
                x0 = left + CELL_PAD + c * (cell_w + CELL_PAD)
                draw.text((x0, 3), label, fill=(0, 0, 0), font=font)
        canvas = np.asarray(img)
    return canvas


def save_grid(canvas: np.ndarray, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path, format="PNG")
    return path
