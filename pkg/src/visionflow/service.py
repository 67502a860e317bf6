"""HTTP service exposing the general request API and the specific vision ops.

Endpoints:
    POST /v1/requests                     run a full request synchronously
    POST /v1/ops/label                    single-shot object detection
    GET  /v1/models                       list registered executors
    POST /v1/models                       register an executor
    GET  /v1/runs/{run_id}                fetch a persisted run record
    GET  /v1/runs/{run_id}/artifacts/{n}  fetch a composited PPM

Every error body is {"error": {"kind": ..., "detail": ...}}.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import storage
from .config import AppConfig, build_engine, build_registry
from .core import OperationKind
from .engine import Engine, EngineConfig, NodeStatus
from .errors import (
    NoCapableModel,
    PlanningFailed,
    RunNotFound,
    SchemaViolation,
    VisionFlowError,
)
from .executors import ExecInput
from .images import resolve_image
from .registry import descriptor_from_dict, descriptor_to_dict

_STATUS_BY_KIND = {
    "SchemaViolation": 400,
    "WireFormatError": 400,
    "EmptyLabel": 400,
    "EmptyInput": 400,
    "InvalidDescriptor": 400,
    "ParseFailed": 422,
    "PlanningFailed": 422,
    "NoCapableModel": 422,
    "UnplannableRequest": 422,
    "NoCandidates": 422,
    "RunNotFound": 404,
    "DuplicateModelId": 409,
    "StorageFailure": 500,
    "CompositingFailure": 500,
}


def _error_response(kind: str, detail: str) -> JSONResponse:
    status = _STATUS_BY_KIND.get(kind, 500)
    return JSONResponse(status_code=status, content={"error": {"kind": kind, "detail": detail}})


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception as exc:
        raise SchemaViolation(f"body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise SchemaViolation("body must be a JSON object")
    return body


def _engine_overrides(base: EngineConfig, options: dict) -> EngineConfig:
    known = {"verify_threshold", "retry_budget", "max_parallel", "lambda"}
    unknown = set(options) - known
    if unknown:
        raise SchemaViolation(f"unknown options: {sorted(unknown)}")
    try:
        return EngineConfig(
            verify_threshold=options.get("verify_threshold", base.verify_threshold),
            retry_budget=options.get("retry_budget", base.retry_budget),
            max_parallel=options.get("max_parallel", base.max_parallel),
            lambda_=options.get("lambda", base.lambda_),
            run_dir=base.run_dir,
        )
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad option value: {exc}") from exc


def create_app(config: AppConfig | None = None, engine: Engine | None = None) -> FastAPI:
    cfg = config if config is not None else AppConfig()
    eng = engine if engine is not None else build_engine(cfg)
    app = FastAPI(title="visionflow", docs_url=None, redoc_url=None)

    @app.exception_handler(VisionFlowError)
    async def _domain_error(_request: Request, exc: VisionFlowError):
        return _error_response(exc.kind, str(exc))

    @app.post("/v1/requests")
    async def submit_request(request: Request):
        body = await _json_body(request)
        text = body.get("text")
        images = body.get("images")
        if not isinstance(text, str) or not text.strip():
            raise SchemaViolation("'text' must be a non-empty string")
        if not isinstance(images, list) or not images:
            raise SchemaViolation("'images' must be a non-empty list of paths")
        options = body.get("options") or {}
        if not isinstance(options, dict):
            raise SchemaViolation("'options' must be an object")
        refs = [resolve_image(p, i) for i, p in enumerate(images)]
        run_cfg = _engine_overrides(eng.config, options)
        record = eng.run_request(text, refs, run_cfg)
        return {
            "run_id": record.run_id,
            "summary": record.artifacts.summary,
            "artifacts": [
                f"/v1/runs/{record.run_id}/artifacts/{name}" for name in record.artifacts.images
            ],
        }

    @app.post("/v1/ops/label")
    async def label_objects(request: Request):
        body = await _json_body(request)
        name = body.get("object_name")
        image = body.get("image")
        if not isinstance(name, str) or not name.strip():
            raise SchemaViolation("'object_name' must be a non-empty string")
        if not isinstance(image, str) or not image.strip():
            raise SchemaViolation("'image' must be a non-empty path")
        ref = resolve_image(image, 0)
        model = eng.registry.select_model(OperationKind.LOCATE)
        from .executors import execute
        from .wire import detection_to_dict

        out = execute(model, ExecInput(OperationKind.LOCATE, name, None, ref))
        return {"detections": [detection_to_dict(d) for d in (out.detections or ())]}

    @app.get("/v1/models")
    async def list_models():
        return {"models": [descriptor_to_dict(m) for m in eng.registry.descriptors()]}

    @app.post("/v1/models")
    async def register_model(request: Request):
        body = await _json_body(request)
        desc = descriptor_from_dict(body)
        eng.registry.register(desc)
        return {"registered": desc.id}

    @app.get("/v1/runs/{run_id}")
    async def get_run(run_id: str):
        record = storage.load(run_id, eng.config.run_dir)
        return storage.record_to_dict(record)

    @app.get("/v1/runs/{run_id}/artifacts/{name}")
    async def get_artifact(run_id: str, name: str):
        directory = storage.artifacts_dir_for(run_id, eng.config.run_dir).resolve()
        path = (directory / name).resolve()
        if directory not in path.parents or not path.is_file():
            raise RunNotFound(f"no artifact {name} for run {run_id}")
        media = "image/x-portable-pixmap" if path.suffix == ".ppm" else "application/octet-stream"
        return Response(content=path.read_bytes(), media_type=media)

    return app
