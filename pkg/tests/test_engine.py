"""Scheduler, retry-loop, integration, and determinism tests."""

from __future__ import annotations

import colorsys
import itertools
import json
import threading
import time

import pytest

from tests.conftest import write_scene
from visionflow.compositing import composite, palette_color
from visionflow.core import (
    ActionProposal,
    BBox,
    Detection,
    ImageRef,
    OperationKind,
    ProposalSet,
    SceneShape,
    SceneSpec,
    rle_encode,
)
from visionflow.engine import Engine, EngineConfig, NodeStatus
from visionflow.errors import PlanningFailed, RemoteUnavailable
from visionflow.executors import ExecOutput, VerifierScoreRecord
from visionflow.planning import PlanDAG, PlanNode, build_dag
from visionflow.prompting import ScriptedBackend, rule_based_plan
from visionflow.registry import ConcurrencyClass, ModelDescriptor, ModelRegistry, default_registry


def mk_registry(*models):
    return ModelRegistry(list(models))


def any_model(mid, quality=0.8, cost=0.1, **kw):
    return ModelDescriptor(
        id=mid,
        capabilities=frozenset(op for op in OperationKind if op is not OperationKind.INTEGRATE),
        quality=quality,
        cost=cost,
        **kw,
    )


def single_node_dag(op=OperationKind.LOCATE, target="dogs"):
    node = PlanNode(0, ActionProposal(op, target=target), ())
    return PlanDAG((node,), "test", (ImageRef("img-0", 8, 8, "mem://0"),))


def stub_output():
    return ExecOutput(detections=())


def scripted_verifier(scores):
    it = iter(scores)

    def verify_fn(output, exec_input, scene):
        return VerifierScoreRecord(next(it), "scripted")

    return verify_fn


def const_verifier(score):
    def verify_fn(output, exec_input, scene):
        return VerifierScoreRecord(score, "const")

    return verify_fn


def stub_executor(output=None):
    def execute_fn(model, exec_input, scene=None, artifact_dir=None):
        return output if output is not None else stub_output()

    return execute_fn


# --- retry loop ----------------------------------------------------------------


def test_retry_then_success():
    engine = Engine(
        registry=mk_registry(any_model("m1")),
        execute_fn=stub_executor(),
        verify_fn=scripted_verifier([0.3, 0.9]),
    )
    cfg = EngineConfig(verify_threshold=0.75, retry_budget=2, run_dir="unused")
    result = engine.run_node(single_node_dag().nodes[0], single_node_dag(), {}, cfg, {"img-0": None})
    assert result.status is NodeStatus.SUCCEEDED
    assert len(result.attempts) == 2
    assert [a.outcome for a in result.attempts] == ["below_threshold", "passed"]


def test_exhaustion_attempt_count():
    engine = Engine(
        registry=mk_registry(any_model("m1", 0.9), any_model("m2", 0.5)),
        execute_fn=stub_executor(),
        verify_fn=const_verifier(0.3),
    )
    cfg = EngineConfig(verify_threshold=0.75, retry_budget=2, run_dir="unused")
    dag = single_node_dag()
    result = engine.run_node(dag.nodes[0], dag, {}, cfg, {"img-0": None})
    assert result.status is NodeStatus.FAILED_VERIFICATION
    assert len(result.attempts) == (1 + 2) * 2  # (1 + budget) x chain length
    assert [a.model_id for a in result.attempts] == ["m1"] * 3 + ["m2"] * 3
    assert max(a.score for a in result.attempts) == 0.3


def test_failover_to_next_model():
    def execute_fn(model, exec_input, scene=None, artifact_dir=None):
        if model.id == "remote":
            raise RemoteUnavailable("connection refused")
        return stub_output()

    engine = Engine(
        registry=mk_registry(any_model("remote", 0.9), any_model("mock", 0.5)),
        execute_fn=execute_fn,
        verify_fn=const_verifier(1.0),
    )
    cfg = EngineConfig(retry_budget=0, run_dir="unused")
    dag = single_node_dag()
    result = engine.run_node(dag.nodes[0], dag, {}, cfg, {"img-0": None})
    assert result.status is NodeStatus.SUCCEEDED
    assert len(result.attempts) == 2
    assert result.model_id == "mock"
    assert result.attempts[0].outcome == "error"


def test_all_models_error_is_failed_execution():
    def execute_fn(model, exec_input, scene=None, artifact_dir=None):
        raise RemoteUnavailable("down")

    engine = Engine(
        registry=mk_registry(any_model("m1")),
        execute_fn=execute_fn,
        verify_fn=const_verifier(1.0),
    )
    dag = single_node_dag()
    result = engine.run_node(dag.nodes[0], dag, {}, EngineConfig(run_dir="x"), {"img-0": None})
    assert result.status is NodeStatus.FAILED_EXECUTION
    assert all(a.outcome == "error" for a in result.attempts)


def test_no_capable_model_is_failed_execution():
    engine = Engine(registry=mk_registry(), execute_fn=stub_executor(), verify_fn=const_verifier(1.0))
    dag = single_node_dag()
    result = engine.run_node(dag.nodes[0], dag, {}, EngineConfig(run_dir="x"), {"img-0": None})
    assert result.status is NodeStatus.FAILED_EXECUTION
    assert result.attempts == ()


def test_perfect_verifier_single_attempt_per_node(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"))
    record = engine.run_request("Find the dogs and segment them", [ref])
    assert all(
        len(r.attempts) == 1
        for r in record.node_results
        if r.status is NodeStatus.SUCCEEDED and r.model_id != "engine-native"
    )


# --- region routing -------------------------------------------------------------


def test_segment_receives_upstream_boxes(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    captured = {}
    from visionflow.executors import execute as real_execute

    def capturing(model, exec_input, scene=None, artifact_dir=None):
        if exec_input.op is OperationKind.SEGMENT:
            captured["regions"] = exec_input.regions
        return real_execute(model, exec_input, scene=scene, artifact_dir=artifact_dir)

    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"), execute_fn=capturing)
    proposals = rule_based_plan("Find the dogs and segment them")
    dag = build_dag(proposals, (ref,), request="r")
    results = engine.schedule(dag)
    assert captured["regions"] == (BBox(10, 10, 20, 20), BBox(40, 30, 12, 18))
    assert all(r.status is NodeStatus.SUCCEEDED for r in results)


def test_locate_with_no_hits_gives_empty_regions(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    captured = {}
    from visionflow.executors import execute as real_execute

    def capturing(model, exec_input, scene=None, artifact_dir=None):
        if exec_input.op is OperationKind.SEGMENT:
            captured["regions"] = exec_input.regions
        return real_execute(model, exec_input, scene=scene, artifact_dir=artifact_dir)

    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"), execute_fn=capturing)
    dag = build_dag(rule_based_plan("Find the cats and segment them"), (ref,), request="r")
    engine.schedule(dag)
    assert captured["regions"] == ()


# --- scheduling ------------------------------------------------------------------


def chain_dag(n, image="img-0"):
    nodes = tuple(
        PlanNode(i, ActionProposal(OperationKind.LOCATE, target=f"t{i}"), (i - 1,) if i else ())
        for i in range(n)
    )
    return PlanDAG(nodes, "chain", (ImageRef(image, 8, 8, f"mem://{image}"),))


def test_skip_after_failed_dependency():
    def verify_fn(output, exec_input, scene):
        return VerifierScoreRecord(0.0 if exec_input.target == "t1" else 1.0, "scripted")

    engine = Engine(
        registry=mk_registry(any_model("m")), execute_fn=stub_executor(), verify_fn=verify_fn
    )
    results = engine.schedule(chain_dag(3), EngineConfig(retry_budget=1, run_dir="x"))
    assert [r.status for r in results] == [
        NodeStatus.SUCCEEDED,
        NodeStatus.FAILED_VERIFICATION,
        NodeStatus.SKIPPED,
    ]


def test_parallelism_is_bounded():
    active = itertools.count()
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def execute_fn(model, exec_input, scene=None, artifact_dir=None):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return stub_output()

    nodes = tuple(
        PlanNode(i, ActionProposal(OperationKind.LOCATE, target=f"t{i}"), ()) for i in range(8)
    )
    dag = PlanDAG(nodes, "wide", (ImageRef("img-0", 8, 8, "mem://0"),))
    engine = Engine(
        registry=mk_registry(any_model("m")), execute_fn=execute_fn, verify_fn=const_verifier(1.0)
    )
    results = engine.schedule(dag, EngineConfig(max_parallel=4, run_dir="x"))
    assert all(r.status is NodeStatus.SUCCEEDED for r in results)
    assert state["peak"] <= 4
    assert state["peak"] >= 2  # sanity: it actually ran concurrently


def test_serial_models_never_overlap():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def execute_fn(model, exec_input, scene=None, artifact_dir=None):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.01)
        with lock:
            state["now"] -= 1
        return stub_output()

    nodes = tuple(
        PlanNode(i, ActionProposal(OperationKind.GENERATE, instruction=f"i{i}"), ())
        for i in range(6)
    )
    dag = PlanDAG(nodes, "serial", (ImageRef("img-0", 8, 8, "mem://0"),))
    engine = Engine(
        registry=mk_registry(any_model("slow", concurrency_class=ConcurrencyClass.SERIAL)),
        execute_fn=execute_fn,
        verify_fn=const_verifier(1.0),
    )
    engine.schedule(dag, EngineConfig(max_parallel=4, run_dir="x"))
    assert state["peak"] == 1


def test_dependencies_respected_in_event_log():
    events = []

    def hook(event, node_id, detail=""):
        events.append((event, node_id))

    diamond = PlanDAG(
        (
            PlanNode(0, ActionProposal(OperationKind.LOCATE, target="a"), ()),
            PlanNode(1, ActionProposal(OperationKind.LOCATE, target="b"), (0,)),
            PlanNode(2, ActionProposal(OperationKind.LOCATE, target="c"), (0,)),
            PlanNode(3, ActionProposal(OperationKind.LOCATE, target="d"), (1, 2)),
        ),
        "diamond",
        (ImageRef("img-0", 8, 8, "mem://0"),),
    )
    engine = Engine(
        registry=mk_registry(any_model("m")),
        execute_fn=stub_executor(),
        verify_fn=const_verifier(1.0),
        event_hook=hook,
    )
    engine.schedule(diamond, EngineConfig(max_parallel=4, run_dir="x"))
    position = {
        (event, node_id): i for i, (event, node_id) in enumerate(events)
    }
    for node in diamond.nodes:
        for dep in node.depends_on:
            assert position[("end", dep)] < position[("start", node.node_id)]


# --- integration and compositing ---------------------------------------------------


def hsv_oracle(hue_degrees):
    """Piecewise HSV to RGB at full saturation/value in exact rational math."""
    from fractions import Fraction

    h = Fraction(hue_degrees % 360, 60)
    x = 1 - abs(h % 2 - 1)
    sector = int(h)
    rgb = [(1, x, 0), (x, 1, 0), (0, 1, x), (0, x, 1), (x, 0, 1), (1, 0, x)][sector % 6]
    return tuple(int(Fraction(v) * 255 + Fraction(1, 2)) for v in rgb)


def test_palette_first_color_is_red():
    assert palette_color(0) == (255, 0, 0)


def test_palette_matches_hsv_oracle():
    for k in range(24):
        assert palette_color(k) == hsv_oracle(k * 137)


def test_palette_colors_distinct_for_small_runs():
    colors = [palette_color(k) for k in range(16)]
    assert len(set(colors)) == len(colors)


def test_composite_identity_without_layers():
    import numpy as np

    base = np.full((4, 4, 3), 9, dtype=np.uint8)
    out = composite(base, [], [])
    assert np.array_equal(out, base)
    assert out is not base


def test_composite_blend_math():
    import numpy as np

    base = np.zeros((2, 2, 3), dtype=np.uint8)
    mask = rle_encode([1, 0, 0, 0], 2, 2)
    out = composite(base, [(mask, (255, 0, 0))], [])
    assert tuple(out[0, 0]) == (128, 0, 0)  # (0 + 255 + 1) // 2
    assert tuple(out[0, 1]) == (0, 0, 0)


def test_worked_example_run(tmp_path, dog_scene, lemon_scene):
    refs = [
        write_scene(dog_scene, tmp_path / "a.json", 0),
        write_scene(lemon_scene, tmp_path / "b.json", 1),
    ]
    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"))
    record = engine.run_request(
        "Find dogs and lemons in the images and then highlight them only", refs
    )
    edges = {n.node_id: n.depends_on for n in record.dag.nodes}
    assert edges == {0: (), 1: (0,), 2: (), 3: (2,), 4: (0, 1, 2, 3)}
    masks = record.artifacts.summary["masks"]
    assert len(masks) == 5  # two dogs plus three lemons
    assert len({tuple(m["color"]) for m in masks}) == 5
    assert record.artifacts.summary["notes"] == []
    for name in record.artifacts.images:
        assert (tmp_path / "runs" / record.run_id / "artifacts" / name).is_file()


def test_no_instances_note(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"))
    record = engine.run_request("Find the zebras and segment them", [ref])
    assert all(r.status is NodeStatus.SUCCEEDED for r in record.node_results)
    assert "no instances found" in record.artifacts.summary["notes"]


def test_two_instances_get_hue_0_and_137(tmp_path):
    scene = SceneSpec(
        40, 40, (SceneShape("frogs", "rect", 2, 2, 10, 10), SceneShape("frogs", "rect", 20, 20, 10, 10))
    )
    ref = write_scene(scene, tmp_path / "frogs.json")
    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"))
    record = engine.run_request("Highlight all frogs", [ref])
    colors = [tuple(m["color"]) for m in record.artifacts.summary["masks"]]
    assert colors == [palette_color(0), palette_color(1)]


def test_deterministic_artifacts(tmp_path, dog_scene, lemon_scene):
    refs = [
        write_scene(dog_scene, tmp_path / "a.json", 0),
        write_scene(lemon_scene, tmp_path / "b.json", 1),
    ]
    request = "Find dogs and lemons in the images and then highlight them only"

    def run_once(run_dir):
        engine = Engine(config=EngineConfig(run_dir=run_dir, max_parallel=1))
        record = engine.run_request(request, refs)
        blobs = [
            (run_dir / record.run_id / "artifacts" / name).read_bytes()
            for name in record.artifacts.images
        ]
        return record, blobs

    first, blobs_a = run_once(tmp_path / "runs-a")
    second, blobs_b = run_once(tmp_path / "runs-b")
    assert blobs_a == blobs_b
    assert first.artifacts.summary == second.artifacts.summary
    assert first.selected == second.selected


# --- planning fallbacks -------------------------------------------------------------


def test_fallback_to_rule_based_when_backend_down(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    engine = Engine(
        planner=ScriptedBackend([]),  # exhausted immediately
        config=EngineConfig(run_dir=tmp_path / "runs"),
    )
    record = engine.run_request("Find the dogs and segment them", [ref])
    assert record.planner_id == "rule-based"
    assert record.artifacts.summary["planner"] == "rule-based"


def test_unparsable_candidates_fall_back(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    engine = Engine(
        planner=ScriptedBackend([["garbage"], ["more garbage"]]),
        config=EngineConfig(run_dir=tmp_path / "runs"),
    )
    record = engine.run_request("Find the dogs and segment them", [ref])
    assert record.planner_id == "rule-based"
    assert record.raw_candidates == ("garbage",)


def test_planning_failed_when_fallback_disabled(tmp_path, dog_scene):
    ref = write_scene(dog_scene, tmp_path / "dogs.json")
    engine = Engine(
        planner=ScriptedBackend([["garbage"]]),
        config=EngineConfig(run_dir=tmp_path / "runs"),
        fallback_to_rule_based=False,
    )
    with pytest.raises(PlanningFailed):
        engine.run_request("Find the dogs", [ref])


def test_run_request_validates_inputs(tmp_path, dog_scene):
    engine = Engine(config=EngineConfig(run_dir=tmp_path / "runs"))
    with pytest.raises(PlanningFailed):
        engine.run_request("  ", [write_scene(dog_scene, tmp_path / "d.json")])
    with pytest.raises(PlanningFailed):
        engine.run_request("find dogs", [])
