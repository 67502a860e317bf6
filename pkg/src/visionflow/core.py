"""Domain value types and the raster primitives shared by every other module.

All types are immutable values and all functions are pure, so anything here
is safe to use from concurrent callers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyLabel

_WHITESPACE = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    """Lowercase, trim, and collapse whitespace runs to single spaces."""
    return _WHITESPACE.sub(" ", raw.strip()).lower()


def normalize_label(raw: str) -> str:
    """Normalize an object phrase into canonical label form.

    Raises EmptyLabel if nothing is left after trimming.
    """
    text = normalize_text(raw)
    if not text:
        raise EmptyLabel(f"label is empty after normalization: {raw!r}")
    return text


class OperationKind(str, Enum):
    """Closed vocabulary of plannable operations."""

    LOCATE = "locate"
    SEGMENT = "segment"
    GENERATE = "generate"
    EDIT = "edit"
    CLASSIFY = "classify"
    CAPTION = "caption"
    INTEGRATE = "integrate"

    @property
    def requires_target(self) -> bool:
        return self in (OperationKind.LOCATE, OperationKind.SEGMENT, OperationKind.CLASSIFY)

    @property
    def allows_instruction(self) -> bool:
        return self in (OperationKind.EDIT, OperationKind.GENERATE)


OPERATION_NAMES = frozenset(op.value for op in OperationKind)


@dataclass(frozen=True)
class ActionProposal:
    """One atomic operation, e.g. locate dogs.

    ``image_refs`` holds 0-based indices into the request's image list; empty
    means the proposal applies to every image.
    """

    op: OperationKind
    target: str | None = None
    instruction: str | None = None
    image_refs: tuple[int, ...] = ()


@dataclass(frozen=True)
class ProposalSet:
    """Ordered collection of proposals produced by a planner."""

    items: tuple[ActionProposal, ...]

    def __iter__(self) -> Iterator[ActionProposal]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box; x/y are offsets, w/h are extents."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box offsets must be non-negative: {self}")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extents must be at least 1: {self}")


@dataclass(frozen=True)
class Detection:
    label: str
    box: BBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class MaskRLE:
    """Run-length encoded binary mask.

    Runs alternate between counts of 0-pixels and 1-pixels over the row-major
    flattening, starting with the 0-count. Only the first run may be zero.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"mask dimensions must be positive: {self.width}x{self.height}")
        if not self.runs:
            raise ValueError("runs may not be empty")
        if any(r < 0 for r in self.runs):
            raise ValueError(f"runs must be non-negative: {self.runs}")
        if any(r == 0 for r in self.runs[1:]):
            raise ValueError(f"only the leading run may be zero: {self.runs}")
        if sum(self.runs) != self.width * self.height:
            raise ValueError(
                f"runs sum {sum(self.runs)} != {self.width}x{self.height} pixels"
            )


@dataclass(frozen=True)
class InstanceMask:
    """A single object instance's mask plus its display color."""

    label: str
    instance_id: int
    mask: MaskRLE
    color: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.instance_id < 0:
            raise ValueError(f"instance_id must be non-negative: {self.instance_id}")


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image by uri; either a scene JSON file or a PPM/PGM raster."""

    id: str
    width: int
    height: int
    uri: str

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive: {self.width}x{self.height}")


_SHAPE_KINDS = ("rect", "ellipse")


@dataclass(frozen=True)
class SceneShape:
    label: str
    kind: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.kind not in _SHAPE_KINDS:
            raise ValueError(f"unknown shape kind: {self.kind!r}")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"shape extents must be at least 1: {self}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"shape offsets must be non-negative: {self}")


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic ground truth: labeled rects and ellipses on a blank canvas."""

    width: int
    height: int
    shapes: tuple[SceneShape, ...] = ()

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"scene dimensions must be positive: {self.width}x{self.height}")
        for shape in self.shapes:
            if shape.x + shape.w > self.width or shape.y + shape.h > self.height:
                raise ValueError(f"shape outside scene bounds: {shape}")


def scene_from_dict(data: dict) -> SceneSpec:
    shapes = tuple(
        SceneShape(
            label=normalize_label(str(s["label"])),
            kind=str(s["kind"]),
            x=int(s["x"]),
            y=int(s["y"]),
            w=int(s["w"]),
            h=int(s["h"]),
        )
        for s in data.get("shapes", [])
    )
    return SceneSpec(width=int(data["width"]), height=int(data["height"]), shapes=shapes)


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "width": scene.width,
        "height": scene.height,
        "shapes": [
            {"label": s.label, "kind": s.kind, "x": s.x, "y": s.y, "w": s.w, "h": s.h}
            for s in scene.shapes
        ],
    }


def load_scene(path: str | Path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene: SceneSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")


# --- run-length encoding ---------------------------------------------------


def rle_encode(bitmap: Sequence[int] | np.ndarray, width: int, height: int) -> MaskRLE:
    """Encode a row-major 0/1 bitmap; inverse of rle_decode."""
    flat = np.asarray(bitmap).reshape(-1)
    if flat.size != width * height:
        raise DimensionMismatch(
            f"bitmap has {flat.size} pixels, expected {width}x{height}"
        )
    flat = (flat != 0).astype(np.uint8)
    change = np.flatnonzero(np.diff(flat))
    starts = np.concatenate(([0], change + 1))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    runs = [int(n) for n in lengths]
    if flat[0] == 1:
        runs.insert(0, 0)
    return MaskRLE(width=width, height=height, runs=tuple(runs))


def rle_decode(mask: MaskRLE) -> np.ndarray:
    """Decode to a flat row-major uint8 array of 0s and 1s."""
    values = (np.arange(len(mask.runs)) % 2).astype(np.uint8)
    return np.repeat(values, mask.runs)


def mask_area(mask: MaskRLE) -> int:
    """Number of 1-pixels."""
    return int(sum(mask.runs[1::2]))


def mask_jaccard(a: MaskRLE, b: MaskRLE) -> float:
    """Intersection over union of two same-sized masks; 1.0 when both empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    fa = rle_decode(a).astype(bool)
    fb = rle_decode(b).astype(bool)
    intersection = int(np.logical_and(fa, fb).sum())
    union = int(np.logical_or(fa, fb).sum())
    if union == 0:
        return 1.0
    return intersection / union


def mask_clip(mask: MaskRLE, box: BBox) -> MaskRLE:
    """Zero out every pixel outside the box."""
    grid = rle_decode(mask).reshape(mask.height, mask.width)
    clipped = np.zeros_like(grid)
    y0, y1 = box.y, min(box.y + box.h, mask.height)
    x0, x1 = box.x, min(box.x + box.w, mask.width)
    if y0 < mask.height and x0 < mask.width:
        clipped[y0:y1, x0:x1] = grid[y0:y1, x0:x1]
    return rle_encode(clipped.ravel(), mask.width, mask.height)


def mask_union(masks: Iterable[MaskRLE], width: int, height: int) -> MaskRLE:
    """Union of zero or more same-sized masks; empty input gives an empty mask."""
    canvas = np.zeros(width * height, dtype=np.uint8)
    for m in masks:
        if (m.width, m.height) != (width, height):
            raise DimensionMismatch(
                f"mask dimensions differ: {m.width}x{m.height} vs {width}x{height}"
            )
        canvas |= rle_decode(m)
    return rle_encode(canvas, width, height)


def boxes_to_mask(boxes: Iterable[BBox], width: int, height: int) -> MaskRLE:
    """Rasterize the union of boxes as a filled mask."""
    canvas = np.zeros((height, width), dtype=np.uint8)
    for b in boxes:
        canvas[b.y : b.y + b.h, b.x : b.x + b.w] = 1
    return rle_encode(canvas.ravel(), width, height)


# --- scene rasterization ---------------------------------------------------


def shape_bitmap(shape: SceneShape, width: int, height: int) -> np.ndarray:
    """Boolean (height, width) membership grid for one shape.

    Ellipses use pixel-center sampling: a pixel belongs when its center
    (px + 0.5, py + 0.5) falls inside the ellipse inscribed in the shape's
    bounding box.
    """
    canvas = np.zeros((height, width), dtype=bool)
    if shape.kind == "rect":
        canvas[shape.y : shape.y + shape.h, shape.x : shape.x + shape.w] = True
        return canvas
    cx = shape.x + shape.w / 2.0
    cy = shape.y + shape.h / 2.0
    rx = shape.w / 2.0
    ry = shape.h / 2.0
    ys, xs = np.mgrid[shape.y : shape.y + shape.h, shape.x : shape.x + shape.w]
    inside = ((xs + 0.5 - cx) / rx) ** 2 + ((ys + 0.5 - cy) / ry) ** 2 <= 1.0
    canvas[shape.y : shape.y + shape.h, shape.x : shape.x + shape.w] = inside
    return canvas


def rasterize_scene(scene: SceneSpec, label: str) -> MaskRLE:
    """Union of all shapes carrying the label, as a mask.

    Labels are compared after normalization with no stemming, so "dogs" never
    matches "dog". An unknown label yields an empty mask.
    """
    want = normalize_label(label)
    canvas = np.zeros((scene.height, scene.width), dtype=bool)
    for shape in scene.shapes:
        if shape.label == want:
            canvas |= shape_bitmap(shape, scene.width, scene.height)
    return rle_encode(canvas.astype(np.uint8).ravel(), scene.width, scene.height)
