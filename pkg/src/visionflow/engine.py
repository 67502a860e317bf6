"""Topological DAG scheduler with verify-and-retry, compositing, persistence.

A run flows prompt -> candidates -> selection -> DAG -> scheduled execution
-> integration, and every stage is captured in an immutable RunRecord that is
persisted before the call returns. Node execution retries the same model up
to the budget, then walks the registry's fallback chain with a fresh budget.
"""

from __future__ import annotations

import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from . import dsl, storage
from .compositing import composite, palette_color
from .core import ImageRef, OperationKind, ProposalSet, SceneSpec
from .errors import (
    NoCapableModel,
    PlanningFailed,
    VisionFlowError,
)
from .executors import ExecInput, ExecOutput, execute, verify
from .images import base_raster, scene_for_ref, write_ppm
from .planning import PlanDAG, PlanNode, ProposalScore, build_dag, score_set, select_best
from .prompting import (
    PromptConfig,
    RuleBasedBackend,
    build_prompt,
    default_prompt_config,
    generate_candidates,
    rule_based_plan,
)
from .registry import ConcurrencyClass, ModelDescriptor, ModelRegistry, default_registry

ENGINE_NATIVE_MODEL = "engine-native"


@dataclass
class EngineConfig:
    verify_threshold: float = 0.75
    retry_budget: int = 2
    max_parallel: int = 4
    lambda_: float = 1.0
    run_dir: Path = Path("runs")

    def __post_init__(self) -> None:
        if not 0.0 <= self.verify_threshold <= 1.0:
            raise ValueError(f"verify_threshold outside [0, 1]: {self.verify_threshold}")
        if self.retry_budget < 0:
            raise ValueError(f"retry_budget must be non-negative: {self.retry_budget}")
        if self.max_parallel < 1:
            raise ValueError(f"max_parallel must be at least 1: {self.max_parallel}")
        if self.lambda_ <= 0:
            raise ValueError(f"lambda must be positive: {self.lambda_}")
        self.run_dir = Path(self.run_dir)


class NodeStatus(str, Enum):
    SUCCEEDED = "Succeeded"
    FAILED_VERIFICATION = "FailedVerification"
    FAILED_EXECUTION = "FailedExecution"
    SKIPPED = "Skipped"


@dataclass(frozen=True)
class AttemptRecord:
    model_id: str
    score: float | None
    outcome: str  # passed | below_threshold | error
    detail: str = ""


@dataclass(frozen=True)
class NodeResult:
    node_id: int
    model_id: str | None
    status: NodeStatus
    attempts: tuple[AttemptRecord, ...] = ()
    final_output: ExecOutput | None = None
    outputs_by_image: tuple[tuple[str, ExecOutput], ...] = ()

    def output_for(self, image_id: str) -> ExecOutput | None:
        for iid, out in self.outputs_by_image:
            if iid == image_id:
                return out
        return None


@dataclass(frozen=True)
class RunArtifacts:
    images: tuple[str, ...]
    summary: dict


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    request: str
    prompt: str
    planner_id: str
    raw_candidates: tuple[str, ...]
    selected: ProposalSet
    score: ProposalScore
    dag: PlanDAG
    node_results: tuple[NodeResult, ...]
    artifacts: RunArtifacts
    created_at: str
    finished_at: str


@dataclass(frozen=True)
class PlanOutcome:
    prompt: str
    raw_candidates: tuple[str, ...]
    selected: ProposalSet
    score: ProposalScore
    planner_id: str


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _merge_outputs(outputs: list[ExecOutput]) -> ExecOutput:
    detections: list = []
    masks: list = []
    labels: list = []
    image_out = None
    captions: list[str] = []
    saw = {"detections": False, "masks": False, "labels": False}
    for out in outputs:
        if out.detections is not None:
            saw["detections"] = True
            detections.extend(out.detections)
        if out.masks is not None:
            saw["masks"] = True
            masks.extend(out.masks)
        if out.labels is not None:
            saw["labels"] = True
            labels.extend(out.labels)
        if out.image_out is not None:
            image_out = out.image_out
        if out.caption:
            captions.append(out.caption)
    return ExecOutput(
        detections=tuple(detections) if saw["detections"] else None,
        masks=tuple(masks) if saw["masks"] else None,
        image_out=image_out,
        caption="; ".join(captions) if captions else None,
        labels=tuple(labels) if saw["labels"] else None,
    )


class Engine:
    """Owns the run lifecycle; all mutable state stays inside one run call."""

    def __init__(
        self,
        registry: ModelRegistry | None = None,
        planner=None,
        prompt_config: PromptConfig | None = None,
        config: EngineConfig | None = None,
        execute_fn=None,
        verify_fn=None,
        event_hook=None,
        fallback_to_rule_based: bool = True,
    ):
        self.registry = registry if registry is not None else default_registry()
        self.planner = planner if planner is not None else RuleBasedBackend()
        self.prompt_config = prompt_config if prompt_config is not None else default_prompt_config()
        self.config = config if config is not None else EngineConfig()
        self._execute = execute_fn if execute_fn is not None else execute
        self._verify = verify_fn if verify_fn is not None else verify
        self._event_hook = event_hook
        self._fallback = fallback_to_rule_based
        self._serial_gates: dict[str, threading.Lock] = {}
        self._gates_lock = threading.Lock()

    # --- events ---

    def _emit(self, event: str, node_id: int, detail: str = "") -> None:
        if self._event_hook is not None:
            self._event_hook(event, node_id, detail)

    def _serial_gate(self, model_id: str) -> threading.Lock:
        with self._gates_lock:
            return self._serial_gates.setdefault(model_id, threading.Lock())

    # --- planning ---

    def plan_request(self, request: str, cfg: EngineConfig | None = None) -> PlanOutcome:
        """Prompt the planner, parse its candidates, and pick the best set.

        Falls back to the rule-based planner when the backend is unreachable
        or nothing parses; only a blank request is truly unplannable.
        """
        cfg = cfg or self.config
        prompt = build_prompt(self.prompt_config, request)
        raw: list[str] = []
        planner_id = getattr(self.planner, "id", "unknown")
        try:
            raw = generate_candidates(self.planner, prompt)
        except VisionFlowError:
            raw = []
        parsed: list[ProposalSet] = []
        for text in raw:
            try:
                parsed.append(dsl.parse_proposals(text))
            except dsl.ProposalParseError:
                continue
        if parsed:
            selected, score = select_best(request, parsed, cfg.lambda_)
            return PlanOutcome(prompt, tuple(raw), selected, score, planner_id)
        if not self._fallback:
            raise PlanningFailed("no candidate parsed and fallback is disabled")
        try:
            selected = rule_based_plan(request)
        except VisionFlowError as exc:
            raise PlanningFailed(f"planner produced nothing usable: {exc}") from exc
        score = score_set(request, selected, cfg.lambda_)
        return PlanOutcome(prompt, tuple(raw), selected, score, "rule-based")

    def _bind_models(self, dag: PlanDAG) -> PlanDAG:
        nodes = []
        for node in dag.nodes:
            if node.proposal.op is OperationKind.INTEGRATE:
                nodes.append(replace(node, model_id=ENGINE_NATIVE_MODEL))
                continue
            try:
                chosen = self.registry.select_model(node.proposal.op)
                nodes.append(replace(node, model_id=chosen.id))
            except NoCapableModel:
                nodes.append(node)
        return replace(dag, nodes=tuple(nodes))

    # --- node execution ---

    def _node_images(self, node: PlanNode, dag: PlanDAG) -> list[ImageRef]:
        if node.proposal.image_refs:
            return [dag.image_refs[i] for i in node.proposal.image_refs]
        return list(dag.image_refs)

    def _upstream_regions(
        self, node: PlanNode, dag: PlanDAG, upstream: dict[int, NodeResult]
    ) -> dict[str, tuple]:
        regions: dict[str, tuple] = {}
        for dep_id in node.depends_on:
            dep_node = dag.nodes[dep_id]
            if dep_node.proposal.op is not OperationKind.LOCATE:
                continue
            dep_result = upstream.get(dep_id)
            if dep_result is None:
                continue
            for image_id, out in dep_result.outputs_by_image:
                if out.detections is not None:
                    regions[image_id] = tuple(d.box for d in out.detections)
        return regions

    def run_node(
        self,
        node: PlanNode,
        dag: PlanDAG,
        upstream: dict[int, NodeResult],
        cfg: EngineConfig,
        scenes: dict[str, SceneSpec | None],
        artifact_dir: Path | None = None,
    ) -> NodeResult:
        proposal = node.proposal
        if proposal.op is OperationKind.INTEGRATE:
            return NodeResult(node.node_id, ENGINE_NATIVE_MODEL, NodeStatus.SUCCEEDED)
        try:
            chain = self.registry.fallback_chain(proposal.op)
        except NoCapableModel:
            return NodeResult(node.node_id, None, NodeStatus.FAILED_EXECUTION)
        images = self._node_images(node, dag)
        regions_by_image = self._upstream_regions(node, dag, upstream)
        attempts: list[AttemptRecord] = []
        best: tuple[float, str, list[tuple[str, ExecOutput]]] | None = None
        for model in chain:
            for _ in range(1 + cfg.retry_budget):
                try:
                    outputs: list[tuple[str, ExecOutput]] = []
                    scores: list[float] = []
                    for image in images:
                        exec_input = ExecInput(
                            op=proposal.op,
                            target=proposal.target,
                            instruction=proposal.instruction,
                            image=image,
                            regions=(
                                regions_by_image.get(image.id)
                                if model.accepts_regions and image.id in regions_by_image
                                else None
                            ),
                        )
                        if model.concurrency_class is ConcurrencyClass.SERIAL:
                            with self._serial_gate(model.id):
                                out = self._execute(
                                    model, exec_input, scene=scenes.get(image.id), artifact_dir=artifact_dir
                                )
                        else:
                            out = self._execute(
                                model, exec_input, scene=scenes.get(image.id), artifact_dir=artifact_dir
                            )
                        record = self._verify(out, exec_input, scenes.get(image.id))
                        outputs.append((image.id, out))
                        scores.append(record.score)
                    score = min(scores) if scores else 1.0
                    if best is None or score > best[0]:
                        best = (score, model.id, outputs)
                    if score >= cfg.verify_threshold:
                        attempts.append(AttemptRecord(model.id, score, "passed"))
                        return NodeResult(
                            node.node_id,
                            model.id,
                            NodeStatus.SUCCEEDED,
                            attempts=tuple(attempts),
                            final_output=_merge_outputs([o for _, o in outputs]),
                            outputs_by_image=tuple(outputs),
                        )
                    attempts.append(AttemptRecord(model.id, score, "below_threshold"))
                except VisionFlowError as exc:
                    attempts.append(AttemptRecord(model.id, None, "error", str(exc)))
        if best is not None:
            score, model_id, outputs = best
            return NodeResult(
                node.node_id,
                model_id,
                NodeStatus.FAILED_VERIFICATION,
                attempts=tuple(attempts),
                final_output=_merge_outputs([o for _, o in outputs]),
                outputs_by_image=tuple(outputs),
            )
        return NodeResult(
            node.node_id, None, NodeStatus.FAILED_EXECUTION, attempts=tuple(attempts)
        )

    # --- scheduling ---

    def schedule(
        self,
        dag: PlanDAG,
        cfg: EngineConfig | None = None,
        scenes: dict[str, SceneSpec | None] | None = None,
        artifact_dir: Path | None = None,
    ) -> list[NodeResult]:
        """Execute the DAG respecting dependencies, bounded by max_parallel.

        A node runs only after every dependency succeeded; a node with a
        failed or skipped dependency is marked Skipped without executing.
        """
        cfg = cfg or self.config
        if scenes is None:
            scenes = {ref.id: scene_for_ref(ref) for ref in dag.image_refs}
        nodes = {n.node_id: n for n in dag.nodes}
        children: dict[int, list[int]] = {nid: [] for nid in nodes}
        missing: dict[int, int] = {}
        for n in dag.nodes:
            missing[n.node_id] = len(n.depends_on)
            for dep in n.depends_on:
                children[dep].append(n.node_id)
        results: dict[int, NodeResult] = {}
        ready = sorted(nid for nid, count in missing.items() if count == 0)

        def finish(node_id: int, result: NodeResult) -> list[int]:
            results[node_id] = result
            newly_ready: list[int] = []
            for child in children[node_id]:
                if child in results:
                    continue
                if result.status is not NodeStatus.SUCCEEDED:
                    self._emit("skip", child)
                    newly_ready.extend(
                        finish(child, NodeResult(child, None, NodeStatus.SKIPPED))
                    )
                    continue
                missing[child] -= 1
                if missing[child] == 0:
                    newly_ready.append(child)
            return newly_ready

        with ThreadPoolExecutor(max_workers=cfg.max_parallel) as pool:
            futures = {}

            def submit(node_id: int) -> None:
                self._emit("submit", node_id)
                # Snapshot dependency results here; workers must not touch the
                # live results dict while this thread mutates it.
                deps = {d: results[d] for d in nodes[node_id].depends_on}
                futures[
                    pool.submit(self._run_node_logged, nodes[node_id], dag, deps, cfg, scenes, artifact_dir)
                ] = node_id

            for nid in ready:
                submit(nid)
            while futures:
                done, _ = wait(futures, return_when=FIRST_COMPLETED)
                for fut in done:
                    node_id = futures.pop(fut)
                    result = fut.result()
                    for nid in sorted(finish(node_id, result)):
                        if nid not in results:
                            submit(nid)
        return [results[n.node_id] for n in dag.nodes]

    def _run_node_logged(self, node, dag, upstream, cfg, scenes, artifact_dir) -> NodeResult:
        self._emit("start", node.node_id)
        result = self.run_node(node, dag, upstream, cfg, scenes, artifact_dir)
        self._emit("end", node.node_id, result.status.value)
        return result

    # --- integration ---

    def integrate_run(
        self,
        dag: PlanDAG,
        results: list[NodeResult],
        artifact_dir: Path | None,
        planner_id: str = "",
    ) -> tuple[list[str], dict]:
        """Composite every image and summarize the run.

        Masks are recolored in global emission order (node order, then mask
        order within a node) so every instance in the run gets a distinct
        palette color; detection boxes are outlined on top.
        """
        ordered = sorted(results, key=lambda r: r.node_id)
        emission = 0
        artifact_names: list[str] = []
        mask_entries: list[dict] = []
        target_counts: dict[str, dict[str, int]] = {}
        has_region_ops = any(
            n.proposal.op in (OperationKind.LOCATE, OperationKind.SEGMENT) for n in dag.nodes
        )
        total_payload = 0
        for index, ref in enumerate(dag.image_refs):
            base = base_raster(ref)
            layers: list[tuple] = []
            boxes: list = []
            for nr in ordered:
                if nr.status is not NodeStatus.SUCCEEDED:
                    continue
                out = nr.output_for(ref.id)
                if out is None:
                    continue
                for mask in out.masks or ():
                    color = palette_color(emission)
                    layers.append((mask.mask, color))
                    mask_entries.append(
                        {
                            "label": mask.label,
                            "instance": emission,
                            "color": list(color),
                            "image": ref.id,
                            "node_id": nr.node_id,
                        }
                    )
                    counts = target_counts.setdefault(mask.label, {"detections": 0, "masks": 0})
                    counts["masks"] += 1
                    emission += 1
                for det in out.detections or ():
                    boxes.append(det.box)
                    counts = target_counts.setdefault(det.label, {"detections": 0, "masks": 0})
                    counts["detections"] += 1
            total_payload += len(layers) + len(boxes)
            canvas = composite(base, layers, boxes)
            name = f"composite-{index}.ppm"
            if artifact_dir is not None:
                write_ppm(canvas, Path(artifact_dir) / name)
            artifact_names.append(name)
        notes: list[str] = []
        if has_region_ops and total_payload == 0:
            notes.append("no instances found")
        summary = {
            "request": dag.request,
            "planner": planner_id,
            "targets": target_counts,
            "nodes": [
                {
                    "node_id": nr.node_id,
                    "op": dag.nodes[nr.node_id].proposal.op.value,
                    "target": dag.nodes[nr.node_id].proposal.target,
                    "status": nr.status.value,
                    "model_id": nr.model_id,
                    "attempts": [
                        {"model_id": a.model_id, "score": a.score, "outcome": a.outcome}
                        for a in nr.attempts
                    ],
                }
                for nr in ordered
            ],
            "masks": mask_entries,
            "artifacts": artifact_names,
            "notes": notes,
        }
        return artifact_names, summary

    # --- whole request ---

    def run_request(
        self,
        request: str,
        images: list[ImageRef] | tuple[ImageRef, ...],
        cfg: EngineConfig | None = None,
    ) -> RunRecord:
        if not request.strip():
            raise PlanningFailed("request is empty")
        if not images:
            raise PlanningFailed("no images supplied")
        cfg = cfg or self.config
        created_at = _now()
        run_id = storage.new_run_id()
        plan = self.plan_request(request, cfg)
        dag = self._bind_models(build_dag(plan.selected, tuple(images), request=request))
        artifact_dir = storage.artifacts_dir_for(run_id, cfg.run_dir)
        artifact_dir.mkdir(parents=True, exist_ok=True)
        results = self.schedule(dag, cfg, artifact_dir=artifact_dir)
        artifact_names, summary = self.integrate_run(dag, results, artifact_dir, plan.planner_id)
        record = RunRecord(
            run_id=run_id,
            request=request,
            prompt=plan.prompt,
            planner_id=plan.planner_id,
            raw_candidates=plan.raw_candidates,
            selected=plan.selected,
            score=plan.score,
            dag=dag,
            node_results=tuple(results),
            artifacts=RunArtifacts(images=tuple(artifact_names), summary=summary),
            created_at=created_at,
            finished_at=_now(),
        )
        storage.persist(record, cfg.run_dir)
        return record
