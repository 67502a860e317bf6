"""Palette assignment, alpha blending, and box outlining for composites."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .core import BBox, MaskRLE, rle_decode
from .errors import CompositingFailure

GOLDEN_ANGLE = 137
BOX_OUTLINE_COLOR = (255, 255, 255)


def palette_color(index: int) -> tuple[int, int, int]:
    """Instance color: hue (index * 137) mod 360 at full saturation and value.

    HSV to RGB is evaluated in exact integer arithmetic (ties round up) so the
    palette is bit-identical everywhere.
    """
    hue = (index * GOLDEN_ANGLE) % 360
    sector = hue // 60
    ramp = 60 - abs(hue % 120 - 60)
    x = (2 * 255 * ramp + 60) // 120
    return [
        (255, x, 0),
        (x, 255, 0),
        (0, 255, x),
        (0, x, 255),
        (x, 0, 255),
        (255, 0, x),
    ][sector]


def blend_mask(canvas: np.ndarray, mask: MaskRLE, color: tuple[int, int, int]) -> None:
    """Alpha-blend (alpha 0.5, round half up) a mask's color into the canvas."""
    height, width = canvas.shape[:2]
    if (mask.width, mask.height) != (width, height):
        raise CompositingFailure(
            f"mask is {mask.width}x{mask.height}, canvas is {width}x{height}"
        )
    hit = rle_decode(mask).reshape(height, width).astype(bool)
    mixed = (canvas[hit].astype(np.uint16) + np.array(color, dtype=np.uint16) + 1) // 2
    canvas[hit] = mixed.astype(np.uint8)


def outline_box(canvas: np.ndarray, box: BBox, color: tuple[int, int, int] = BOX_OUTLINE_COLOR) -> None:
    """Draw a 1 px rectangle outline, clamped to the canvas."""
    height, width = canvas.shape[:2]
    x0, y0 = box.x, box.y
    x1, y1 = min(box.x + box.w, width) - 1, min(box.y + box.h, height) - 1
    if x0 >= width or y0 >= height or x1 < x0 or y1 < y0:
        return
    rgb = np.array(color, dtype=np.uint8)
    canvas[y0, x0 : x1 + 1] = rgb
    canvas[y1, x0 : x1 + 1] = rgb
    canvas[y0 : y1 + 1, x0] = rgb
    canvas[y0 : y1 + 1, x1] = rgb


def composite(
    base: np.ndarray,
    layers: Sequence[tuple[MaskRLE, tuple[int, int, int]]] = (),
    boxes: Iterable[BBox] = (),
) -> np.ndarray:
    """Blend mask layers in order onto a copy of the base, then outline boxes."""
    if base.ndim != 3 or base.shape[2] != 3:
        raise CompositingFailure(f"base raster must be (h, w, 3), got {base.shape}")
    out = base.copy()
    for mask, color in layers:
        blend_mask(out, mask, color)
    for box in boxes:
        outline_box(out, box)
    return out
