"""Core type and raster primitive tests, checked against per-pixel oracles."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visionflow.core import (
    BBox,
    MaskRLE,
    SceneShape,
    SceneSpec,
    mask_area,
    mask_clip,
    mask_jaccard,
    normalize_label,
    rasterize_scene,
    rle_decode,
    rle_encode,
)
from visionflow.errors import DimensionMismatch, EmptyLabel


# --- oracles -----------------------------------------------------------------


def rle_encode_oracle(bitmap: list[int]) -> list[int]:
    """Reference encoder: explicit walk, zeros first."""
    runs = []
    current = 0
    count = 0
    for px in bitmap:
        px = 1 if px else 0
        if px == current:
            count += 1
        else:
            runs.append(count)
            current = px
            count = 1
    runs.append(count)
    return runs


def jaccard_oracle(a: list[int], b: list[int]) -> float:
    inter = sum(1 for x, y in zip(a, b) if x and y)
    union = sum(1 for x, y in zip(a, b) if x or y)
    return 1.0 if union == 0 else inter / union


def shape_member_oracle(shape: SceneShape, px: int, py: int) -> bool:
    if shape.kind == "rect":
        return shape.x <= px < shape.x + shape.w and shape.y <= py < shape.y + shape.h
    cx = shape.x + shape.w / 2
    cy = shape.y + shape.h / 2
    rx = shape.w / 2
    ry = shape.h / 2
    return ((px + 0.5 - cx) / rx) ** 2 + ((py + 0.5 - cy) / ry) ** 2 <= 1.0


def scene_popcount_oracle(scene: SceneSpec, label: str) -> int:
    count = 0
    for py in range(scene.height):
        for px in range(scene.width):
            if any(
                s.label == label and shape_member_oracle(s, px, py) for s in scene.shapes
            ):
                count += 1
    return count


# --- normalize_label ---------------------------------------------------------


def test_normalize_examples():
    assert normalize_label("  Dogs ") == "dogs"
    assert normalize_label("Yellow  Flower") == "yellow flower"


def test_normalize_empty_raises():
    with pytest.raises(EmptyLabel):
        normalize_label("   ")


@given(st.text(max_size=40))
def test_normalize_idempotent(text):
    try:
        once = normalize_label(text)
    except EmptyLabel:
        return
    assert normalize_label(once) == once
    assert once == once.strip()
    assert "  " not in once
    assert once == once.lower()


# --- RLE ---------------------------------------------------------------------


def test_rle_examples():
    assert rle_encode([1] * 8, 4, 2).runs == (0, 8)
    assert rle_encode([0] * 8, 4, 2).runs == (8,)
    bitmap = [1, 1, 0, 0, 0, 0, 0, 0]
    assert rle_encode_oracle(bitmap) == [0, 2, 6]
    assert rle_encode(bitmap, 4, 2).runs == (0, 2, 6)


def test_rle_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        rle_encode([0, 1], 4, 2)


@st.composite
def bitmaps(draw):
    width = draw(st.integers(min_value=1, max_value=12))
    height = draw(st.integers(min_value=1, max_value=12))
    bits = draw(st.lists(st.integers(0, 1), min_size=width * height, max_size=width * height))
    return width, height, bits


@given(bitmaps())
def test_rle_round_trip(data):
    width, height, bits = data
    mask = rle_encode(bits, width, height)
    assert list(rle_decode(mask)) == bits
    assert mask.runs == tuple(rle_encode_oracle(bits)) or (
        bits[0] == 1 and mask.runs == (0, *rle_encode_oracle(bits))
    )


@given(bitmaps())
def test_rle_canonical_form(data):
    width, height, bits = data
    mask = rle_encode(bits, width, height)
    assert sum(mask.runs) == width * height
    assert all(r > 0 for r in mask.runs[1:])


def test_mask_rle_validation():
    with pytest.raises(ValueError):
        MaskRLE(2, 2, (1, 0, 3))
    with pytest.raises(ValueError):
        MaskRLE(2, 2, (1, 2))


# --- jaccard -----------------------------------------------------------------


def test_jaccard_examples():
    full = rle_encode([1] * 4, 2, 2)
    assert mask_jaccard(full, full) == 1.0
    left = rle_encode([1, 0, 1, 0], 2, 2)
    right = rle_encode([0, 1, 0, 1], 2, 2)
    assert mask_jaccard(left, right) == 0.0
    # 2x1 prediction inside a 2x2 truth region: intersection 2, union 4.
    pred = rle_encode([1, 1, 0, 0], 2, 2)
    gt = rle_encode([1, 1, 1, 1], 2, 2)
    assert mask_jaccard(pred, gt) == 0.5


def test_jaccard_both_empty():
    empty = rle_encode([0] * 6, 3, 2)
    assert mask_jaccard(empty, empty) == 1.0


def test_jaccard_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        mask_jaccard(rle_encode([0] * 4, 2, 2), rle_encode([0] * 6, 3, 2))


@given(bitmaps(), st.data())
def test_jaccard_matches_oracle_and_is_symmetric(data, extra):
    width, height, bits_a = data
    bits_b = extra.draw(
        st.lists(st.integers(0, 1), min_size=width * height, max_size=width * height)
    )
    a = rle_encode(bits_a, width, height)
    b = rle_encode(bits_b, width, height)
    score = mask_jaccard(a, b)
    assert score == jaccard_oracle(bits_a, bits_b)
    assert score == mask_jaccard(b, a)
    assert 0.0 <= score <= 1.0
    assert (score == 1.0) == (bits_a == bits_b)


# --- rasterization -----------------------------------------------------------


def test_rasterize_no_stemming():
    scene = SceneSpec(64, 64, (SceneShape("dog", "rect", 10, 10, 20, 20),))
    assert mask_area(rasterize_scene(scene, "dogs")) == 0
    assert mask_area(rasterize_scene(scene, "dog")) == 400


def test_rasterize_overlapping_rects_matches_bruteforce():
    scene = SceneSpec(
        32,
        32,
        (
            SceneShape("cat", "rect", 4, 4, 10, 10),
            SceneShape("cat", "rect", 8, 8, 10, 10),
        ),
    )
    assert mask_area(rasterize_scene(scene, "cat")) == scene_popcount_oracle(scene, "cat")


@st.composite
def scenes(draw):
    width = draw(st.integers(min_value=8, max_value=48))
    height = draw(st.integers(min_value=8, max_value=48))
    n = draw(st.integers(min_value=0, max_value=5))
    shapes = []
    for _ in range(n):
        w = draw(st.integers(min_value=1, max_value=width))
        h = draw(st.integers(min_value=1, max_value=height))
        x = draw(st.integers(min_value=0, max_value=width - w))
        y = draw(st.integers(min_value=0, max_value=height - h))
        label = draw(st.sampled_from(["dogs", "lemons", "frogs"]))
        kind = draw(st.sampled_from(["rect", "ellipse"]))
        shapes.append(SceneShape(label, kind, x, y, w, h))
    return SceneSpec(width, height, tuple(shapes))


@settings(max_examples=50, deadline=None)
@given(scenes(), st.sampled_from(["dogs", "lemons", "frogs", "cats"]))
def test_rasterize_matches_bruteforce(scene, label):
    assert mask_area(rasterize_scene(scene, label)) == scene_popcount_oracle(scene, label)


def test_rasterize_ellipse_popcount_bruteforce():
    scene = SceneSpec(20, 20, (SceneShape("egg", "ellipse", 2, 3, 9, 12),))
    assert mask_area(rasterize_scene(scene, "egg")) == scene_popcount_oracle(scene, "egg")


def test_mask_clip_restricts_pixels():
    scene = SceneSpec(16, 16, (SceneShape("dogs", "rect", 0, 0, 16, 16),))
    full = rasterize_scene(scene, "dogs")
    clipped = mask_clip(full, BBox(4, 4, 5, 6))
    grid = rle_decode(clipped).reshape(16, 16)
    assert grid.sum() == 30
    assert grid[:4].sum() == 0 and grid[:, :4].sum() == 0


def test_scene_bounds_enforced():
    with pytest.raises(ValueError):
        SceneSpec(10, 10, (SceneShape("dogs", "rect", 5, 5, 10, 10),))
