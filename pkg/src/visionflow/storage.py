"""Run record persistence: one directory per run plus an append-only index.

Records are written atomically (temp file then rename) and are immutable once
persisted. The index is only updated after a record is fully committed, so a
crash between the temp write and the rename never leaves a dangling id.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

from .core import ActionProposal, ImageRef, OperationKind, ProposalSet
from .errors import RunNotFound, StorageFailure
from .executors import ExecOutput, exec_output_from_dict, exec_output_to_dict
from .planning import PlanDAG, PlanNode, ProposalScore
from .wire import image_ref_from_dict, image_ref_to_dict

_CROCKFORD32 = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def new_run_id(timestamp_ms: int | None = None, randomness: bytes | None = None) -> str:
    """26-character sortable id: 48 bits of milliseconds plus 80 random bits."""
    ts = int(time.time() * 1000) if timestamp_ms is None else timestamp_ms
    rand = os.urandom(10) if randomness is None else randomness
    value = ((ts & (2**48 - 1)) << 80) | int.from_bytes(rand, "big")
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD32[value & 31])
        value >>= 5
    return "".join(reversed(chars))


# --- codecs -------------------------------------------------------------------


def proposal_to_dict(p: ActionProposal) -> dict:
    return {
        "op": p.op.value,
        "target": p.target,
        "instruction": p.instruction,
        "image_refs": list(p.image_refs),
    }


def proposal_from_dict(data: dict) -> ActionProposal:
    return ActionProposal(
        op=OperationKind(data["op"]),
        target=data.get("target"),
        instruction=data.get("instruction"),
        image_refs=tuple(data.get("image_refs", ())),
    )


def proposal_set_to_dict(s: ProposalSet) -> dict:
    return {"items": [proposal_to_dict(p) for p in s.items]}


def proposal_set_from_dict(data: dict) -> ProposalSet:
    return ProposalSet(tuple(proposal_from_dict(p) for p in data["items"]))


def score_to_dict(score: ProposalScore) -> dict:
    return {
        "congruence": score.congruence,
        "regularizer": score.regularizer,
        "total": score.total,
        "lambda": score.lambda_,
    }


def score_from_dict(data: dict) -> ProposalScore:
    return ProposalScore(
        congruence=data["congruence"],
        regularizer=data["regularizer"],
        total=data["total"],
        lambda_=data["lambda"],
    )


def dag_to_dict(dag: PlanDAG) -> dict:
    return {
        "request": dag.request,
        "image_refs": [image_ref_to_dict(r) for r in dag.image_refs],
        "nodes": [
            {
                "node_id": n.node_id,
                "proposal": proposal_to_dict(n.proposal),
                "depends_on": list(n.depends_on),
                "model_id": n.model_id,
            }
            for n in dag.nodes
        ],
    }


def dag_from_dict(data: dict) -> PlanDAG:
    return PlanDAG(
        nodes=tuple(
            PlanNode(
                node_id=n["node_id"],
                proposal=proposal_from_dict(n["proposal"]),
                depends_on=tuple(n["depends_on"]),
                model_id=n.get("model_id"),
            )
            for n in data["nodes"]
        ),
        request=data["request"],
        image_refs=tuple(image_ref_from_dict(r) for r in data["image_refs"]),
    )


def _output_to_dict(out: ExecOutput | None) -> dict | None:
    return exec_output_to_dict(out, include_color=True) if out is not None else None


def _output_from_dict(data: dict | None) -> ExecOutput | None:
    return exec_output_from_dict(data) if data is not None else None


# NodeResult/RunRecord codecs live here rather than on the engine classes so
# the engine stays import-light; the engine module registers itself lazily.


def record_to_dict(record) -> dict:
    return {
        "run_id": record.run_id,
        "request": record.request,
        "prompt": record.prompt,
        "planner_id": record.planner_id,
        "raw_candidates": list(record.raw_candidates),
        "selected": proposal_set_to_dict(record.selected),
        "score": score_to_dict(record.score),
        "dag": dag_to_dict(record.dag),
        "node_results": [
            {
                "node_id": nr.node_id,
                "model_id": nr.model_id,
                "status": nr.status.value,
                "attempts": [
                    {
                        "model_id": a.model_id,
                        "score": a.score,
                        "outcome": a.outcome,
                        "detail": a.detail,
                    }
                    for a in nr.attempts
                ],
                "final_output": _output_to_dict(nr.final_output),
                "outputs_by_image": [
                    [image_id, exec_output_to_dict(out, include_color=True)]
                    for image_id, out in nr.outputs_by_image
                ],
            }
            for nr in record.node_results
        ],
        "artifacts": {"images": list(record.artifacts.images), "summary": record.artifacts.summary},
        "created_at": record.created_at,
        "finished_at": record.finished_at,
    }


def record_from_dict(data: dict):
    from .engine import AttemptRecord, NodeResult, NodeStatus, RunArtifacts, RunRecord

    return RunRecord(
        run_id=data["run_id"],
        request=data["request"],
        prompt=data["prompt"],
        planner_id=data["planner_id"],
        raw_candidates=tuple(data["raw_candidates"]),
        selected=proposal_set_from_dict(data["selected"]),
        score=score_from_dict(data["score"]),
        dag=dag_from_dict(data["dag"]),
        node_results=tuple(
            NodeResult(
                node_id=nr["node_id"],
                model_id=nr.get("model_id"),
                status=NodeStatus(nr["status"]),
                attempts=tuple(
                    AttemptRecord(
                        model_id=a["model_id"],
                        score=a.get("score"),
                        outcome=a["outcome"],
                        detail=a.get("detail", ""),
                    )
                    for a in nr["attempts"]
                ),
                final_output=_output_from_dict(nr.get("final_output")),
                outputs_by_image=tuple(
                    (image_id, exec_output_from_dict(out))
                    for image_id, out in nr.get("outputs_by_image", [])
                ),
            )
            for nr in data["node_results"]
        ),
        artifacts=RunArtifacts(
            images=tuple(data["artifacts"]["images"]),
            summary=data["artifacts"]["summary"],
        ),
        created_at=data["created_at"],
        finished_at=data["finished_at"],
    )


# --- filesystem layout --------------------------------------------------------


def run_dir_for(run_id: str, run_dir: str | Path) -> Path:
    return Path(run_dir) / run_id


def artifacts_dir_for(run_id: str, run_dir: str | Path) -> Path:
    return run_dir_for(run_id, run_dir) / "artifacts"


def _atomic_write(path: Path, payload: str) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            try:
                tmp.unlink()
            except OSError:
                pass


def _read_index(run_dir: Path) -> list[str]:
    index_path = run_dir / "index.json"
    if not index_path.exists():
        return []
    try:
        return list(json.loads(index_path.read_text(encoding="utf-8")).get("runs", []))
    except (OSError, ValueError) as exc:
        raise StorageFailure(f"cannot read run index: {exc}") from exc


def persist(record, run_dir: str | Path) -> Path:
    """Write a run record and register it in the index; refuses overwrites."""
    base = Path(run_dir)
    target = run_dir_for(record.run_id, base)
    record_path = target / "record.json"
    if record_path.exists():
        raise StorageFailure(f"run {record.run_id} is already persisted")
    try:
        target.mkdir(parents=True, exist_ok=True)
        (target / "artifacts").mkdir(exist_ok=True)
        _atomic_write(record_path, json.dumps(record_to_dict(record), indent=2, sort_keys=True) + "\n")
        runs = _read_index(base)
        if record.run_id not in runs:
            runs.append(record.run_id)
        _atomic_write(base / "index.json", json.dumps({"runs": sorted(runs)}, indent=2) + "\n")
    except OSError as exc:
        raise StorageFailure(f"cannot persist run {record.run_id}: {exc}") from exc
    return record_path


def load(run_id: str, run_dir: str | Path):
    record_path = run_dir_for(run_id, run_dir) / "record.json"
    if not record_path.exists():
        raise RunNotFound(f"no run {run_id} under {run_dir}")
    try:
        data = json.loads(record_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise StorageFailure(f"cannot read run {run_id}: {exc}") from exc
    return record_from_dict(data)


def list_runs(run_dir: str | Path) -> list[str]:
    return sorted(_read_index(Path(run_dir)))
