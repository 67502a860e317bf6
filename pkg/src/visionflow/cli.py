"""Command-line interface.

Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dsl, storage
from .config import build_engine, build_registry, load_app_config
from .engine import EngineConfig
from .errors import VisionFlowError
from .images import resolve_image
from .planning import evaluate_backend, load_corpus
from .registry import ModelRegistry, descriptor_from_dict, descriptor_to_dict


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="visionflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="print the canonical proposal text for a request")
    p_plan.add_argument("text")
    p_plan.add_argument("--config", dest="config", default=None)
    p_plan.add_argument("--lambda", dest="lambda_", type=float, default=None)

    p_run = sub.add_parser("run", help="plan and execute a request over images")
    p_run.add_argument("--text", required=True)
    p_run.add_argument("--image", action="append", required=True, help="scene JSON or PPM/PGM path")
    p_run.add_argument("--config", dest="config", default=None)
    p_run.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p_run.add_argument("--tau", type=float, default=None, help="verification threshold")
    p_run.add_argument("--retries", type=int, default=None, help="per-model retry budget")
    p_run.add_argument("--parallel", type=int, default=None, help="max concurrent executions")
    p_run.add_argument("--out", default=None, help="run directory")

    p_models = sub.add_parser("models", help="inspect or extend a model registry")
    models_sub = p_models.add_subparsers(dest="models_command", required=True)
    p_list = models_sub.add_parser("list")
    p_list.add_argument("--registry", default=None, help="registry JSON path (default: builtin mocks)")
    p_reg = models_sub.add_parser("register")
    p_reg.add_argument("--file", required=True, help="descriptor JSON file")
    p_reg.add_argument("--registry", default="models.json", help="registry JSON path to update")

    p_eval = sub.add_parser("eval", help="evaluate the configured planner on a corpus")
    p_eval.add_argument("--corpus", required=True, help="JSONL file of input/gold pairs")
    p_eval.add_argument("--config", dest="config", default=None)
    p_eval.add_argument("--lambda", dest="lambda_", type=float, default=None)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--config", dest="config", default=None)

    return parser


def _engine_from_args(args) -> tuple:
    cfg = load_app_config(getattr(args, "config", None))
    overrides = {
        "lambda_": getattr(args, "lambda_", None),
        "verify_threshold": getattr(args, "tau", None),
        "retry_budget": getattr(args, "retries", None),
        "max_parallel": getattr(args, "parallel", None),
        "run_dir": getattr(args, "out", None),
    }
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    if kwargs:
        base = cfg.engine
        cfg.engine = EngineConfig(
            verify_threshold=kwargs.get("verify_threshold", base.verify_threshold),
            retry_budget=kwargs.get("retry_budget", base.retry_budget),
            max_parallel=kwargs.get("max_parallel", base.max_parallel),
            lambda_=kwargs.get("lambda_", base.lambda_),
            run_dir=Path(kwargs.get("run_dir", base.run_dir)),
        )
    return cfg, build_engine(cfg)


def _cmd_plan(args) -> int:
    _cfg, engine = _engine_from_args(args)
    outcome = engine.plan_request(args.text)
    print(dsl.serialize_proposals(outcome.selected))
    return 0


def _cmd_run(args) -> int:
    _cfg, engine = _engine_from_args(args)
    refs = [resolve_image(path, i) for i, path in enumerate(args.image)]
    record = engine.run_request(args.text, refs)
    artifact_dir = storage.artifacts_dir_for(record.run_id, engine.config.run_dir)
    print(
        json.dumps(
            {
                "run_id": record.run_id,
                "summary": record.artifacts.summary,
                "artifacts": [str(artifact_dir / name) for name in record.artifacts.images],
            },
            indent=2,
        )
    )
    return 0


def _cmd_models(args) -> int:
    if args.models_command == "list":
        cfg = load_app_config(None)
        cfg.registry_path = args.registry
        registry = build_registry(cfg)
        print(json.dumps(registry.to_dict(), indent=2))
        return 0
    with open(args.file, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    descriptors = data["models"] if isinstance(data, dict) and "models" in data else [data]
    path = Path(args.registry)
    registry = ModelRegistry.load(path) if path.exists() else ModelRegistry()
    for d in descriptors:
        registry.register(descriptor_from_dict(d))
    registry.save(path)
    print(json.dumps({"registered": [d["id"] for d in descriptors], "registry": str(path)}))
    return 0


def _cmd_eval(args) -> int:
    cfg, engine = _engine_from_args(args)
    corpus = load_corpus(args.corpus)
    report = evaluate_backend(engine.planner, corpus, engine.prompt_config, engine.config.lambda_)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = load_app_config(args.config)
    uvicorn.run(create_app(cfg), host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "run": _cmd_run,
    "models": _cmd_models,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _COMMANDS[args.command](args)
    except VisionFlowError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
