"""JSON codecs for the executor and verifier wire protocols.

Encoders emit plain dicts; ``canonical_dumps`` freezes them into the byte
form used for golden fixtures (sorted keys, compact separators). Decoders
raise WireFormatError, which clients re-map to RemoteMalformed and the
service re-maps to SchemaViolation.
"""

from __future__ import annotations

import json

from .core import BBox, Detection, ImageRef, InstanceMask, MaskRLE
from .errors import WireFormatError


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def bbox_to_dict(box: BBox) -> dict:
    return {"x": box.x, "y": box.y, "w": box.w, "h": box.h}


def bbox_from_dict(data: dict) -> BBox:
    try:
        return BBox(x=int(data["x"]), y=int(data["y"]), w=int(data["w"]), h=int(data["h"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise WireFormatError(f"bad box: {exc}") from exc


def detection_to_dict(det: Detection) -> dict:
    return {"label": det.label, "box": bbox_to_dict(det.box), "confidence": det.confidence}


def detection_from_dict(data: dict) -> Detection:
    try:
        return Detection(
            label=str(data["label"]),
            box=bbox_from_dict(data["box"]),
            confidence=float(data["confidence"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireFormatError(f"bad detection: {exc}") from exc


def rle_to_dict(mask: MaskRLE) -> dict:
    return {"width": mask.width, "height": mask.height, "runs": list(mask.runs)}


def rle_from_dict(data: dict) -> MaskRLE:
    try:
        return MaskRLE(
            width=int(data["width"]),
            height=int(data["height"]),
            runs=tuple(int(r) for r in data["runs"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireFormatError(f"bad mask rle: {exc}") from exc


def instance_mask_to_dict(mask: InstanceMask, include_color: bool = False) -> dict:
    data = {
        "label": mask.label,
        "instance_id": mask.instance_id,
        "rle": rle_to_dict(mask.mask),
    }
    if include_color:
        data["color"] = list(mask.color)
    return data


def instance_mask_from_dict(data: dict) -> InstanceMask:
    from .compositing import palette_color  # color is not carried on the wire

    try:
        instance_id = int(data["instance_id"])
        color = tuple(int(c) for c in data["color"]) if "color" in data else palette_color(instance_id)
        return InstanceMask(
            label=str(data["label"]),
            instance_id=instance_id,
            mask=rle_from_dict(data["rle"]),
            color=color,  # type: ignore[arg-type]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireFormatError(f"bad instance mask: {exc}") from exc


def image_ref_to_dict(ref: ImageRef) -> dict:
    return {"id": ref.id, "width": ref.width, "height": ref.height, "uri": ref.uri}


def image_ref_from_dict(data: dict) -> ImageRef:
    try:
        return ImageRef(
            id=str(data["id"]),
            width=int(data["width"]),
            height=int(data["height"]),
            uri=str(data["uri"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireFormatError(f"bad image reference: {exc}") from exc
