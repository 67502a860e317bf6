"""Candidate scoring, plan selection, DAG compilation, and corpus evaluation.

A candidate proposal set is scored as ``total = (1 - congruence) +
lambda * regularizer``: congruence measures how well the set's targets echo
the request, and the regularizer penalizes infeasible structure. The best
candidate is compiled into a dependency DAG that region-restricted operations
execute against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import dsl
from .core import ActionProposal, ImageRef, OperationKind, ProposalSet, normalize_text
from .errors import InvalidProposalSet, NoCandidates
from .prompting import PromptConfig, build_prompt, generate_candidates

PENALTY_UNKNOWN_OP = 1.0
PENALTY_MISSING_LOCATE = 0.5
PENALTY_DUPLICATE = 0.25
PENALTY_INTEGRATE = 0.5


@dataclass(frozen=True)
class ProposalScore:
    congruence: float
    regularizer: float
    total: float
    lambda_: float


@dataclass(frozen=True)
class PlanNode:
    node_id: int
    proposal: ActionProposal
    depends_on: tuple[int, ...]
    model_id: str | None = None


@dataclass(frozen=True)
class PlanDAG:
    nodes: tuple[PlanNode, ...]
    request: str
    image_refs: tuple[ImageRef, ...]


@dataclass(frozen=True)
class CorpusItem:
    input: str
    gold: ProposalSet


def _triple(p: ActionProposal) -> tuple[str, str, str]:
    return (p.op.value, normalize_text(p.target or ""), normalize_text(p.instruction or ""))


def discrepancy(generated: ProposalSet, gold: ProposalSet) -> float:
    """Normalized edit distance between two proposal sequences, in [0, 1].

    Proposals compare as (op, target, instruction) triples; the raw
    Levenshtein distance is divided by the longer sequence length.
    """
    a = [_triple(p) for p in generated.items]
    b = [_triple(p) for p in gold.items]
    if not a and not b:
        return 0.0
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, bj in enumerate(b, start=1):
            cost = 0 if ai == bj else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[len(b)] / max(len(a), len(b))


def regularizer(proposals: ProposalSet, allowed_ops: frozenset[OperationKind] | None = None) -> float:
    """Sum of structural penalties; 0.0 for a fully well-formed set.

    Charges 1.0 per operation outside ``allowed_ops`` (when given), 0.5 per
    Segment/Edit with no earlier same-target Locate, 0.25 per exact duplicate,
    and 0.5 per Integrate placement or uniqueness violation.
    """
    items = proposals.items
    penalty = 0.0
    integrate_seen = False
    for i, p in enumerate(items):
        if allowed_ops is not None and p.op not in allowed_ops:
            penalty += PENALTY_UNKNOWN_OP
        if p.op in (OperationKind.SEGMENT, OperationKind.EDIT):
            if not any(
                q.op is OperationKind.LOCATE and q.target == p.target for q in items[:i]
            ):
                penalty += PENALTY_MISSING_LOCATE
        if any(p == q for q in items[:i]):
            penalty += PENALTY_DUPLICATE
        if p.op is OperationKind.INTEGRATE:
            if i != len(items) - 1:
                penalty += PENALTY_INTEGRATE
            if integrate_seen:
                penalty += PENALTY_INTEGRATE
            integrate_seen = True
    return penalty


_NON_OBJECT_TARGETS = ("image", "all results")


def congruence(request: str, proposals: ProposalSet) -> float:
    """Fraction of the set's object targets that appear in the request."""
    if not request.strip():
        raise ValueError("request may not be empty")
    text = normalize_text(request)
    targets = {
        p.target for p in proposals.items if p.target and p.target not in _NON_OBJECT_TARGETS
    }
    if not targets:
        return 1.0
    return sum(1 for t in targets if t in text) / len(targets)


def score_set(request: str, proposals: ProposalSet, lambda_: float = 1.0) -> ProposalScore:
    c = congruence(request, proposals)
    r = regularizer(proposals)
    return ProposalScore(congruence=c, regularizer=r, total=(1.0 - c) + lambda_ * r, lambda_=lambda_)


def select_best(
    request: str, candidates: list[ProposalSet], lambda_: float = 1.0
) -> tuple[ProposalSet, ProposalScore]:
    """Pick the lowest-total candidate.

    Ties break toward fewer proposals, then the lexicographically smallest
    canonical serialization, making the choice independent of candidate order
    and duplicates.
    """
    if not candidates:
        raise NoCandidates("no candidate proposal sets")
    scored = [
        (score_set(request, c, lambda_), c, dsl.serialize_proposals(c)) for c in candidates
    ]
    score, best, _ = min(scored, key=lambda t: (t[0].total, len(t[1].items), t[2]))
    return best, score


def build_dag(
    proposals: ProposalSet, images: list[ImageRef] | tuple[ImageRef, ...], request: str = ""
) -> PlanDAG:
    """Compile a valid proposal set into a dependency DAG.

    Segment depends on the most recent earlier Locate with the same target
    (none leaves it whole-image); Edit prefers the most recent same-target
    Segment, then Locate; Integrate depends on every other node. Unrelated
    nodes share no edges so they may run concurrently.
    """
    diags = dsl.validate_set(proposals)
    if diags:
        raise InvalidProposalSet(
            "; ".join(f"{d.kind.value}: {d.detail}" for d in diags)
        )
    image_refs = tuple(images)
    items = proposals.items
    for p in items:
        if any(idx < 0 or idx >= len(image_refs) for idx in p.image_refs):
            raise InvalidProposalSet(f"image index out of range in {p}")

    def latest(upto: int, op: OperationKind, target: str | None) -> int | None:
        for j in range(upto - 1, -1, -1):
            if items[j].op is op and items[j].target == target:
                return j
        return None

    nodes: list[PlanNode] = []
    for i, p in enumerate(items):
        deps: tuple[int, ...] = ()
        if p.op is OperationKind.SEGMENT:
            j = latest(i, OperationKind.LOCATE, p.target)
            deps = (j,) if j is not None else ()
        elif p.op is OperationKind.EDIT:
            j = latest(i, OperationKind.SEGMENT, p.target)
            if j is None:
                j = latest(i, OperationKind.LOCATE, p.target)
            deps = (j,) if j is not None else ()
        elif p.op is OperationKind.INTEGRATE:
            deps = tuple(k for k in range(len(items)) if k != i)
        nodes.append(PlanNode(node_id=i, proposal=p, depends_on=deps))
    return PlanDAG(nodes=tuple(nodes), request=request, image_refs=image_refs)


# --- corpus evaluation -------------------------------------------------------


@dataclass(frozen=True)
class BackendReport:
    items: int
    exact_match_rate: float
    mean_discrepancy: float
    mean_regularizer: float
    parse_failures: int

    def to_dict(self) -> dict:
        return {
            "items": self.items,
            "exact_match_rate": self.exact_match_rate,
            "mean_discrepancy": self.mean_discrepancy,
            "mean_regularizer": self.mean_regularizer,
            "parse_failures": self.parse_failures,
        }


REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "items",
        "exact_match_rate",
        "mean_discrepancy",
        "mean_regularizer",
        "parse_failures",
    ],
    "properties": {
        "items": {"type": "integer", "minimum": 1},
        "exact_match_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "mean_discrepancy": {"type": "number", "minimum": 0, "maximum": 1},
        "mean_regularizer": {"type": "number", "minimum": 0},
        "parse_failures": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}


def load_corpus(path: str | Path) -> list[CorpusItem]:
    """Read a JSONL corpus of {"input": str, "gold": str} rows."""
    items: list[CorpusItem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            gold = dsl.parse_proposals(row["gold"])
            if dsl.validate_set(gold):
                raise ValueError(f"corpus line {line_no}: gold set is invalid")
            items.append(CorpusItem(input=row["input"], gold=gold))
    return items


def evaluate_backend(
    backend,
    corpus: list[CorpusItem],
    cfg: PromptConfig,
    lambda_: float = 1.0,
) -> BackendReport:
    """Run a planner backend over a labeled corpus and aggregate quality.

    An item whose candidates all fail to parse counts as a parse failure with
    discrepancy 1.0; no fallback planner is consulted here, so a broken
    backend scores 0.0 instead of inheriting the fallback's answers.
    """
    if not corpus:
        raise ValueError("corpus may not be empty")
    exact = 0
    parse_failures = 0
    discrepancies: list[float] = []
    regularizers: list[float] = []
    for item in corpus:
        prompt = build_prompt(cfg, item.input)
        raw = generate_candidates(backend, prompt)
        parsed: list[ProposalSet] = []
        for text in raw:
            try:
                parsed.append(dsl.parse_proposals(text))
            except dsl.ProposalParseError:
                continue
        if not parsed:
            parse_failures += 1
            discrepancies.append(1.0)
            continue
        selected, score = select_best(item.input, parsed, lambda_)
        discrepancies.append(discrepancy(selected, item.gold))
        regularizers.append(score.regularizer)
        if selected == item.gold:
            exact += 1
    return BackendReport(
        items=len(corpus),
        exact_match_rate=exact / len(corpus),
        mean_discrepancy=sum(discrepancies) / len(discrepancies),
        mean_regularizer=(sum(regularizers) / len(regularizers)) if regularizers else 0.0,
        parse_failures=parse_failures,
    )
