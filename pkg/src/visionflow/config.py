"""Application configuration shared by the CLI and the HTTP service.

The config file is JSON mirroring the engine, prompt, and planner settings
plus a registry path; command-line flags override file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .engine import Engine, EngineConfig
from .prompting import (
    BackendKind,
    ContextExample,
    PlannerBackendDescriptor,
    PromptConfig,
    default_prompt_config,
    make_backend,
)
from .registry import ModelRegistry, default_registry


@dataclass
class AppConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    prompt: PromptConfig = field(default_factory=default_prompt_config)
    planner: PlannerBackendDescriptor = field(
        default_factory=lambda: PlannerBackendDescriptor(id="rule-based", kind=BackendKind.RULE_BASED)
    )
    registry_path: str | None = None
    scripted_replies_path: str | None = None


def load_app_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    engine_data = data.get("engine", {})
    engine_cfg = EngineConfig(
        verify_threshold=engine_data.get("verify_threshold", 0.75),
        retry_budget=engine_data.get("retry_budget", 2),
        max_parallel=engine_data.get("max_parallel", 4),
        lambda_=engine_data.get("lambda", 1.0),
        run_dir=Path(engine_data.get("run_dir", "runs")),
    )
    prompt_data = data.get("prompt")
    if prompt_data is None:
        prompt_cfg = default_prompt_config()
    else:
        prompt_cfg = PromptConfig(
            op_candidates=tuple(prompt_data["op_candidates"]),
            examples=tuple(
                ContextExample(input=e["input"], output=e["output"])
                for e in prompt_data.get("examples", [])
            ),
            max_examples=prompt_data.get("max_examples", 4),
        )
    planner_data = data.get("planner")
    if planner_data is None:
        planner = PlannerBackendDescriptor(id="rule-based", kind=BackendKind.RULE_BASED)
    else:
        planner = PlannerBackendDescriptor(
            id=planner_data.get("id", "planner"),
            kind=BackendKind(planner_data.get("kind", "RuleBased")),
            endpoint=planner_data.get("endpoint"),
            n_candidates=planner_data.get("n_candidates", 1),
        )
    return AppConfig(
        engine=engine_cfg,
        prompt=prompt_cfg,
        planner=planner,
        registry_path=data.get("registry_path"),
        scripted_replies_path=data.get("scripted_replies_path"),
    )


def build_registry(cfg: AppConfig) -> ModelRegistry:
    if cfg.registry_path:
        return ModelRegistry.load(cfg.registry_path)
    return default_registry()


def build_engine(cfg: AppConfig, registry: ModelRegistry | None = None) -> Engine:
    backend = make_backend(cfg.planner, scripted_path=cfg.scripted_replies_path)
    return Engine(
        registry=registry if registry is not None else build_registry(cfg),
        planner=backend,
        prompt_config=cfg.prompt,
        config=cfg.engine,
    )
