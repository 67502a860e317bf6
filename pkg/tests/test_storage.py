"""Run persistence tests: round-trips, index consistency, crash atomicity."""

from __future__ import annotations

import json
import os
import random

import pytest

from visionflow.core import (
    ActionProposal,
    BBox,
    Detection,
    ImageRef,
    InstanceMask,
    OperationKind,
    ProposalSet,
    rle_encode,
)
from visionflow.engine import (
    AttemptRecord,
    NodeResult,
    NodeStatus,
    RunArtifacts,
    RunRecord,
)
from visionflow.errors import RunNotFound, StorageFailure
from visionflow.planning import PlanDAG, PlanNode, ProposalScore
from visionflow.storage import (
    artifacts_dir_for,
    list_runs,
    load,
    new_run_id,
    persist,
    record_from_dict,
    record_to_dict,
)


def random_record(rng: random.Random) -> RunRecord:
    n_nodes = rng.randint(1, 4)
    proposals = []
    for _ in range(n_nodes):
        op = rng.choice([OperationKind.LOCATE, OperationKind.SEGMENT, OperationKind.CAPTION])
        proposals.append(ActionProposal(op, target=rng.choice(["dogs", "cats", None]) or None))
    pset = ProposalSet(tuple(proposals))
    refs = tuple(
        ImageRef(f"img-{i}", rng.randint(4, 32), rng.randint(4, 32), f"mem://{i}")
        for i in range(rng.randint(1, 2))
    )
    nodes = tuple(
        PlanNode(i, p, tuple(range(max(0, i - rng.randint(0, i or 1)), i)) if i else ())
        for i, p in enumerate(pset.items)
    )
    dag = PlanDAG(nodes, "request text", refs)

    def random_output(width, height):
        bits = [rng.randint(0, 1) for _ in range(width * height)]
        mask = InstanceMask("dogs", 0, rle_encode(bits, width, height), (255, 0, 0))
        det = Detection("dogs", BBox(0, 0, 2, 2), rng.random())
        return __import__("visionflow.executors", fromlist=["ExecOutput"]).ExecOutput(
            detections=(det,), masks=(mask,)
        )

    results = tuple(
        NodeResult(
            node_id=i,
            model_id=rng.choice(["mock-detector", None]),
            status=rng.choice(list(NodeStatus)),
            attempts=tuple(
                AttemptRecord("mock-detector", rng.choice([None, rng.random()]), "passed")
                for _ in range(rng.randint(0, 3))
            ),
            final_output=random_output(refs[0].width, refs[0].height),
            outputs_by_image=tuple(
                (ref.id, random_output(ref.width, ref.height)) for ref in refs
            ),
        )
        for i in range(n_nodes)
    )
    return RunRecord(
        run_id=new_run_id(),
        request="request text",
        prompt="prompt text",
        planner_id="rule-based",
        raw_candidates=("raw one", "raw two"),
        selected=pset,
        score=ProposalScore(rng.random(), rng.random(), rng.random(), 1.0),
        dag=dag,
        node_results=results,
        artifacts=RunArtifacts(("composite-0.ppm",), {"targets": {"dogs": {"masks": 1}}}),
        created_at="2026-08-10T10:00:00+00:00",
        finished_at="2026-08-10T10:00:01+00:00",
    )


def test_round_trip_many_generated_records(tmp_path):
    rng = random.Random(42)
    for i in range(50):
        record = random_record(rng)
        persist(record, tmp_path)
        assert load(record.run_id, tmp_path) == record


def test_codec_round_trip_without_disk():
    rng = random.Random(7)
    record = random_record(rng)
    assert record_from_dict(json.loads(json.dumps(record_to_dict(record)))) == record


def test_load_unknown_id(tmp_path):
    with pytest.raises(RunNotFound):
        load("NOPE", tmp_path)


def test_index_sorted_and_complete(tmp_path):
    rng = random.Random(3)
    ids = []
    for _ in range(3):
        record = random_record(rng)
        persist(record, tmp_path)
        ids.append(record.run_id)
    assert list_runs(tmp_path) == sorted(ids)


def test_run_ids_sort_by_time():
    early = new_run_id(timestamp_ms=1_000_000, randomness=b"\xff" * 10)
    late = new_run_id(timestamp_ms=2_000_000, randomness=b"\x00" * 10)
    assert early < late
    assert len(early) == 26


def test_records_immutable_once_written(tmp_path):
    record = random_record(random.Random(5))
    persist(record, tmp_path)
    with pytest.raises(StorageFailure):
        persist(record, tmp_path)


def test_crash_between_temp_write_and_rename_keeps_index_consistent(tmp_path, monkeypatch):
    survivor = random_record(random.Random(8))
    persist(survivor, tmp_path)
    baseline = list_runs(tmp_path)

    victim = random_record(random.Random(9))
    real_replace = os.replace

    def explode(src, dst):
        raise OSError("simulated crash before rename")

    monkeypatch.setattr(os, "replace", explode)
    with pytest.raises(StorageFailure):
        persist(victim, tmp_path)
    monkeypatch.setattr(os, "replace", real_replace)

    assert list_runs(tmp_path) == baseline
    with pytest.raises(RunNotFound):
        load(victim.run_id, tmp_path)
    # No temp debris was left behind where the record would have lived.
    leftovers = [p for p in (tmp_path / victim.run_id).glob("*.tmp-*")]
    assert leftovers == []


def test_artifacts_dir_layout(tmp_path):
    record = random_record(random.Random(11))
    persist(record, tmp_path)
    assert artifacts_dir_for(record.run_id, tmp_path).is_dir()
    assert (tmp_path / record.run_id / "record.json").is_file()
