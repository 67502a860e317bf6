"""Executor and verifier contracts, deterministic mocks, and the HTTP client.

Mock executors answer from a scene's ground truth, so identical (scene,
input) pairs always produce identical outputs. Remote executors speak the
/v1/execute protocol and carry images by reference, never inline bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import requests

from .compositing import palette_color
from .core import (
    BBox,
    Detection,
    ImageRef,
    InstanceMask,
    OperationKind,
    SceneSpec,
    boxes_to_mask,
    mask_clip,
    mask_jaccard,
    mask_union,
    normalize_label,
    rasterize_scene,
    scene_to_dict,
)
from .errors import (
    CapabilityMismatch,
    RemoteMalformed,
    RemoteUnavailable,
    VerifierUnavailable,
    WireFormatError,
)
from .images import scene_for_ref
from .registry import ModelDescriptor
from .wire import (
    bbox_to_dict,
    detection_from_dict,
    detection_to_dict,
    image_ref_from_dict,
    image_ref_to_dict,
    instance_mask_from_dict,
    instance_mask_to_dict,
)

DEFAULT_EXECUTE_TIMEOUT = 120.0
MOCK_CONFIDENCE = 0.9


@dataclass(frozen=True)
class ExecInput:
    op: OperationKind
    target: str | None
    instruction: str | None
    image: ImageRef
    regions: tuple[BBox, ...] | None = None


@dataclass(frozen=True)
class ExecOutput:
    """One executor result; at least one payload field is set on success.

    A present-but-empty list still counts as a payload (a detector finding
    nothing is a successful answer).
    """

    detections: tuple[Detection, ...] | None = None
    masks: tuple[InstanceMask, ...] | None = None
    image_out: ImageRef | None = None
    caption: str | None = None
    labels: tuple[tuple[str, float], ...] | None = None

    @property
    def has_payload(self) -> bool:
        return any(
            v is not None
            for v in (self.detections, self.masks, self.image_out, self.caption, self.labels)
        )


@dataclass(frozen=True)
class VerifierScoreRecord:
    score: float
    method: str
    detail: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"verifier score outside [0, 1]: {self.score}")


# --- mock executors ----------------------------------------------------------


def _matching_shapes(scene: SceneSpec, target: str | None):
    if target is None:
        return list(scene.shapes)
    want = normalize_label(target)
    return [s for s in scene.shapes if s.label == want]


def _mock_locate(inp: ExecInput, scene: SceneSpec | None) -> ExecOutput:
    if scene is None:
        return ExecOutput(detections=())
    detections = tuple(
        Detection(label=s.label, box=BBox(s.x, s.y, s.w, s.h), confidence=MOCK_CONFIDENCE)
        for s in _matching_shapes(scene, inp.target)
    )
    return ExecOutput(detections=detections)


def _mock_classify(inp: ExecInput, scene: SceneSpec | None) -> ExecOutput:
    if scene is None:
        return ExecOutput(labels=())
    seen: list[str] = []
    for s in _matching_shapes(scene, inp.target):
        if s.label not in seen:
            seen.append(s.label)
    return ExecOutput(labels=tuple((label, MOCK_CONFIDENCE) for label in seen))


def _mock_segment(inp: ExecInput, scene: SceneSpec | None) -> ExecOutput:
    if scene is None or inp.target is None:
        return ExecOutput(masks=())
    target = normalize_label(inp.target)
    full = rasterize_scene(scene, target)
    if inp.regions is not None:
        regions = inp.regions
    else:
        # Whole-image mode: one instance per ground-truth shape, clipped to
        # its bounding box, mirroring what region-restricted calls produce.
        regions = tuple(BBox(s.x, s.y, s.w, s.h) for s in _matching_shapes(scene, target))
    masks = tuple(
        InstanceMask(
            label=target,
            instance_id=i,
            mask=mask_clip(full, region),
            color=palette_color(i),
        )
        for i, region in enumerate(regions)
    )
    return ExecOutput(masks=masks)


def _mock_generate(inp: ExecInput, scene: SceneSpec | None, artifact_dir: Path | None) -> ExecOutput:
    stamp = hashlib.sha1((inp.instruction or "").encode("utf-8")).hexdigest()[:8]
    out_id = f"{inp.image.id}-gen-{stamp}"
    if scene is not None and artifact_dir is not None:
        payload = scene_to_dict(scene)
        payload["provenance"] = {
            "source": inp.image.id,
            "operation": inp.op.value,
            "instruction": inp.instruction or "",
        }
        path = Path(artifact_dir) / f"{out_id}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        uri = str(path)
    else:
        uri = f"mock://generated/{out_id}"
    return ExecOutput(
        image_out=ImageRef(id=out_id, width=inp.image.width, height=inp.image.height, uri=uri)
    )


def _mock_caption(inp: ExecInput, scene: SceneSpec | None) -> ExecOutput:
    if scene is None:
        return ExecOutput(caption=f"an image of {inp.image.width}x{inp.image.height} pixels")
    shapes = _matching_shapes(scene, inp.target)
    if not shapes:
        return ExecOutput(caption="an empty scene")
    counts: dict[str, int] = {}
    for s in shapes:
        counts[s.label] = counts.get(s.label, 0) + 1
    parts = [f"{n} {label}" for label, n in sorted(counts.items())]
    return ExecOutput(caption="a scene with " + " and ".join(parts))


BUILTIN_EXECUTOR_NAMES = frozenset(
    {"mock-detector", "mock-segmenter", "mock-generator", "mock-captioner", "engine-native"}
)


def execute(
    model: ModelDescriptor,
    inp: ExecInput,
    scene: SceneSpec | None = None,
    artifact_dir: Path | None = None,
    timeout: float = DEFAULT_EXECUTE_TIMEOUT,
) -> ExecOutput:
    """Run one operation on one image through the given model.

    Builtin mocks resolve the scene from the image uri when one is not
    passed explicitly; remote models are called over HTTP.
    """
    if inp.op not in model.capabilities:
        raise CapabilityMismatch(f"model {model.id} does not support {inp.op.value}")
    binding = model.endpoint or model.id
    if binding.startswith(("http://", "https://")):
        return remote_execute(binding, inp, timeout=timeout)
    if binding not in BUILTIN_EXECUTOR_NAMES:
        raise CapabilityMismatch(f"model {model.id} has no executor binding: {binding!r}")
    if scene is None:
        scene = scene_for_ref(inp.image)
    if inp.op in (OperationKind.LOCATE,):
        return _mock_locate(inp, scene)
    if inp.op is OperationKind.CLASSIFY:
        return _mock_classify(inp, scene)
    if inp.op is OperationKind.SEGMENT:
        return _mock_segment(inp, scene)
    if inp.op in (OperationKind.GENERATE, OperationKind.EDIT):
        return _mock_generate(inp, scene, artifact_dir)
    if inp.op is OperationKind.CAPTION:
        return _mock_caption(inp, scene)
    # Integrate is engine-native; executors never see it.
    raise CapabilityMismatch(f"operation {inp.op.value} is not executable by a model")


# --- verification ------------------------------------------------------------


class RemoteVerifier:
    """Client for the vision-text similarity protocol: POST {endpoint}/v1/verify."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_EXECUTE_TIMEOUT):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def score(self, image: ImageRef, text: str) -> float:
        try:
            resp = requests.post(
                f"{self.endpoint}/v1/verify",
                json={"image": image_ref_to_dict(image), "text": text},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise VerifierUnavailable(f"verifier at {self.endpoint} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise VerifierUnavailable(f"verifier returned HTTP {resp.status_code}")
        try:
            value = resp.json()["score"]
            return float(value)
        except (ValueError, KeyError, TypeError) as exc:
            raise VerifierUnavailable(f"verifier reply malformed: {exc}") from exc


def verify(
    output: ExecOutput,
    inp: ExecInput,
    ground: SceneSpec | None = None,
    remote: RemoteVerifier | None = None,
) -> VerifierScoreRecord:
    """Score an executor output against ground truth or a remote verifier.

    With a scene: Locate and Segment score as the Jaccard overlap between the
    predicted region union and the target's true pixels; other operations
    score 1.0 when a payload is present. Without a scene a remote verifier
    must be configured.
    """
    if ground is not None:
        if inp.op is OperationKind.LOCATE and inp.target is not None:
            truth = rasterize_scene(ground, inp.target)
            predicted = boxes_to_mask(
                [d.box for d in (output.detections or ())], ground.width, ground.height
            )
            score = mask_jaccard(predicted, truth)
            return VerifierScoreRecord(score, "mock-jaccard-boxes", f"target={inp.target}")
        if inp.op is OperationKind.SEGMENT and inp.target is not None:
            truth = rasterize_scene(ground, inp.target)
            predicted = mask_union(
                (m.mask for m in (output.masks or ())), ground.width, ground.height
            )
            score = mask_jaccard(predicted, truth)
            return VerifierScoreRecord(score, "mock-jaccard-masks", f"target={inp.target}")
        score = 1.0 if output.has_payload else 0.0
        return VerifierScoreRecord(score, "payload-present", inp.op.value)
    if remote is None:
        raise VerifierUnavailable("no ground truth and no remote verifier configured")
    text = " ".join(filter(None, (inp.op.value, inp.target, inp.instruction)))
    score = remote.score(inp.image, text)
    return VerifierScoreRecord(min(max(score, 0.0), 1.0), "remote-similarity", text)


# --- remote executor client ---------------------------------------------------


def exec_input_to_dict(inp: ExecInput) -> dict:
    return {
        "op": inp.op.value,
        "target": inp.target,
        "instruction": inp.instruction,
        "image": image_ref_to_dict(inp.image),
        "regions": [bbox_to_dict(b) for b in inp.regions] if inp.regions is not None else None,
    }


def exec_output_to_dict(out: ExecOutput, include_color: bool = False) -> dict:
    return {
        "detections": (
            [detection_to_dict(d) for d in out.detections] if out.detections is not None else None
        ),
        "masks": (
            [instance_mask_to_dict(m, include_color) for m in out.masks]
            if out.masks is not None
            else None
        ),
        "image_out": image_ref_to_dict(out.image_out) if out.image_out is not None else None,
        "caption": out.caption,
        "labels": [[label, conf] for label, conf in out.labels] if out.labels is not None else None,
    }


def exec_output_from_dict(data: dict) -> ExecOutput:
    try:
        detections = data.get("detections")
        masks = data.get("masks")
        image_out = data.get("image_out")
        labels = data.get("labels")
        out = ExecOutput(
            detections=(
                tuple(detection_from_dict(d) for d in detections) if detections is not None else None
            ),
            masks=(
                tuple(instance_mask_from_dict(m) for m in masks) if masks is not None else None
            ),
            image_out=image_ref_from_dict(image_out) if image_out is not None else None,
            caption=data.get("caption"),
            labels=(
                tuple((str(l), float(c)) for l, c in labels) if labels is not None else None
            ),
        )
    except (TypeError, ValueError, WireFormatError) as exc:
        raise WireFormatError(f"bad executor output: {exc}") from exc
    if not out.has_payload:
        raise WireFormatError("executor output has no payload fields")
    return out


def remote_execute(endpoint: str, inp: ExecInput, timeout: float = DEFAULT_EXECUTE_TIMEOUT) -> ExecOutput:
    """POST {endpoint}/v1/execute and decode the reply."""
    try:
        resp = requests.post(
            f"{endpoint.rstrip('/')}/v1/execute",
            json=exec_input_to_dict(inp),
            timeout=timeout,
        )
    except requests.RequestException as exc:
        raise RemoteUnavailable(f"executor at {endpoint} unreachable: {exc}") from exc
    if resp.status_code != 200:
        raise RemoteUnavailable(f"executor at {endpoint} returned HTTP {resp.status_code}")
    try:
        body = resp.json()
    except ValueError as exc:
        raise RemoteMalformed(f"executor reply is not JSON: {exc}") from exc
    try:
        return exec_output_from_dict(body)
    except WireFormatError as exc:
        raise RemoteMalformed(str(exc)) from exc
