"""Binary PPM (P6) / PGM (P5) i/o and image-reference resolution.

Scene JSON files and netpbm rasters are the only accepted image sources.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ImageRef, SceneSpec, load_scene, shape_bitmap
from .errors import SchemaViolation

SCENE_FILL = 128  # gray level used when rendering scene shapes as a base raster


def _read_header_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read whitespace-separated integer tokens, honoring # comments.

    Returns the tokens and the offset one whitespace byte past the last one.
    """
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ValueError("truncated netpbm header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(int(data[i:j]))
            i = j
    return tokens, i + 1


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PPM or PGM into an (h, w, 3) uint8 array.

    Grayscale input is replicated across the three channels.
    """
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported netpbm magic: {magic!r}")
    (width, height, maxval), offset = _read_header_tokens(raw[2:], 3)
    offset += 2
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    pixels = np.frombuffer(raw[offset : offset + expected], dtype=np.uint8)
    if pixels.size != expected:
        raise ValueError(f"raster payload is {pixels.size} bytes, expected {expected}")
    if channels == 1:
        pixels = np.repeat(pixels, 3)
    return pixels.reshape(height, width, 3).copy()


def write_ppm(array: np.ndarray, path: str | Path) -> None:
    """Write an (h, w, 3) uint8 array as binary PPM."""
    if array.ndim != 3 or array.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) array, got shape {array.shape}")
    height, width = array.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + array.astype(np.uint8).tobytes())


def pnm_dimensions(path: str | Path) -> tuple[int, int]:
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise ValueError(f"unsupported netpbm magic: {raw[:2]!r}")
    (width, height, _maxval), _ = _read_header_tokens(raw[2:], 3)
    return width, height


def render_scene(scene: SceneSpec) -> np.ndarray:
    """Render a scene as an RGB raster: black background, gray shape fills."""
    canvas = np.zeros((scene.height, scene.width, 3), dtype=np.uint8)
    for shape in scene.shapes:
        canvas[shape_bitmap(shape, scene.width, scene.height)] = SCENE_FILL
    return canvas


def resolve_image(path: str | Path, index: int = 0) -> ImageRef:
    """Build an ImageRef for a scene JSON or netpbm raster on disk."""
    p = Path(path)
    if not p.is_file():
        raise SchemaViolation(f"image not found: {path}")
    suffix = p.suffix.lower()
    try:
        if suffix == ".json":
            scene = load_scene(p)
            width, height = scene.width, scene.height
        elif suffix in (".ppm", ".pgm"):
            width, height = pnm_dimensions(p)
        else:
            raise ValueError(f"unsupported image type: {suffix!r}")
    except (ValueError, KeyError, OSError) as exc:
        raise SchemaViolation(f"cannot resolve image {path}: {exc}") from exc
    return ImageRef(id=f"img-{index}-{p.stem}", width=width, height=height, uri=str(p.resolve()))


def scene_for_ref(ref: ImageRef) -> SceneSpec | None:
    """Load the ground-truth scene behind a reference, if there is one."""
    if not ref.uri.endswith(".json"):
        return None
    try:
        return load_scene(ref.uri)
    except (OSError, ValueError, KeyError):
        return None


def base_raster(ref: ImageRef) -> np.ndarray:
    """Raster pixels for a reference: rendered scene or decoded PPM/PGM."""
    scene = scene_for_ref(ref)
    if scene is not None:
        return render_scene(scene)
    try:
        return read_pnm(ref.uri)
    except (OSError, ValueError):
        # Unresolvable sources still composite onto a blank canvas.
        return np.zeros((ref.height, ref.width, 3), dtype=np.uint8)
