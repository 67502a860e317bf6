"""Parser, validator, and canonical serializer for the proposal text format.

The grammar is the wire contract between planner backends and the engine:

    list     := WS? item (SEP item)* SEP? WS?
    item     := '"' opname '"' (WS payload)?
    opname   := locate|segment|generate|edit|classify|caption|integrate
    payload  := any chars except ';' and ',' (trimmed)
    SEP      := WS? (';' | ',') WS?

Both separators are accepted; canonical output joins items with "; " and ends
with ";". For edit/generate, a payload "X :: I" splits on the first " :: "
into target X and instruction I. Targets and instructions must not contain
';' or ',' and parsing is all-or-nothing: any violation raises with the full
diagnostic list instead of returning a partial set.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import ActionProposal, OperationKind, ProposalSet, normalize_label, normalize_text
from .errors import VisionFlowError


class DiagnosticKind(str, Enum):
    UNKNOWN_OPERATION = "UnknownOperation"
    MISSING_TARGET = "MissingTarget"
    UNEXPECTED_TOKEN = "UnexpectedToken"
    EMPTY_INPUT = "EmptyInput"
    MISPLACED_INTEGRATE = "MisplacedIntegrate"
    DUPLICATE_INTEGRATE = "DuplicateIntegrate"


@dataclass(frozen=True)
class ParseDiagnostic:
    byte_offset: int
    kind: DiagnosticKind
    detail: str = ""


class ProposalParseError(VisionFlowError):
    """Raised when a proposal text violates the grammar or the set invariants."""

    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        summary = "; ".join(f"{d.kind.value}@{d.byte_offset}: {d.detail}" for d in diagnostics)
        super().__init__(summary or "parse failed")

    @property
    def kind(self) -> str:
        return "ParseFailed"


_OP_BY_NAME = {op.value: op for op in OperationKind}
_INTEGRATE_PAYLOAD = "all results"
_FORBIDDEN_PAYLOAD_CHARS = (";", ",")


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _build_item(
    op: OperationKind,
    raw_payload: str,
    item_offset: int,
    payload_offset: int,
    text: str,
) -> tuple[ActionProposal | None, list[ParseDiagnostic]]:
    payload = raw_payload.strip()
    diags: list[ParseDiagnostic] = []
    target: str | None = None
    instruction: str | None = None

    if op.allows_instruction:
        if payload.startswith(":: "):
            instruction = payload[3:].strip() or None
        elif " :: " in payload:
            left, right = payload.split(" :: ", 1)
            target = normalize_label(left) if left.strip() else None
            instruction = right.strip() or None
        elif payload:
            target = normalize_label(payload)
    elif op is OperationKind.INTEGRATE:
        if payload and normalize_text(payload) != _INTEGRATE_PAYLOAD:
            diags.append(
                ParseDiagnostic(
                    _byte_offset(text, payload_offset),
                    DiagnosticKind.UNEXPECTED_TOKEN,
                    f"integrate accepts only '{_INTEGRATE_PAYLOAD}', got {payload!r}",
                )
            )
    else:
        if payload:
            target = normalize_label(payload)
        elif op.requires_target:
            diags.append(
                ParseDiagnostic(
                    _byte_offset(text, item_offset),
                    DiagnosticKind.MISSING_TARGET,
                    f"{op.value} requires a target",
                )
            )
    if diags:
        return None, diags
    return ActionProposal(op=op, target=target, instruction=instruction), diags


def parse_proposals(text: str) -> ProposalSet:
    """Parse planner output into a ProposalSet; all-or-nothing."""
    diags: list[ParseDiagnostic] = []
    items: list[tuple[ActionProposal, int]] = []
    n = len(text)
    pos = 0
    while pos < n and text[pos].isspace():
        pos += 1
    if pos >= n:
        raise ProposalParseError(
            [ParseDiagnostic(_byte_offset(text, n), DiagnosticKind.EMPTY_INPUT, "no proposals")]
        )
    while pos < n:
        item_offset = pos
        if text[pos] != '"':
            diags.append(
                ParseDiagnostic(
                    _byte_offset(text, pos),
                    DiagnosticKind.UNEXPECTED_TOKEN,
                    f"expected opening quote, found {text[pos]!r}",
                )
            )
            break
        close = text.find('"', pos + 1)
        if close < 0:
            diags.append(
                ParseDiagnostic(
                    _byte_offset(text, pos + 1),
                    DiagnosticKind.UNEXPECTED_TOKEN,
                    "unterminated operation name",
                )
            )
            break
        opname = text[pos + 1 : close]
        payload_start = close + 1
        sep = payload_start
        while sep < n and text[sep] not in ";,":
            sep += 1
        op = _OP_BY_NAME.get(opname)
        if op is None:
            diags.append(
                ParseDiagnostic(
                    _byte_offset(text, pos + 1),
                    DiagnosticKind.UNKNOWN_OPERATION,
                    f"unknown operation {opname!r}",
                )
            )
        else:
            proposal, item_diags = _build_item(op, text[payload_start:sep], item_offset, payload_start, text)
            diags.extend(item_diags)
            if proposal is not None:
                items.append((proposal, item_offset))
        pos = sep
        if pos < n:
            pos += 1  # consume separator
            while pos < n and text[pos].isspace():
                pos += 1
    if not diags:
        diags.extend(_structural_diagnostics(items, text))
    if diags:
        raise ProposalParseError(diags)
    return ProposalSet(tuple(p for p, _ in items))


def _structural_diagnostics(
    items: list[tuple[ActionProposal, int]], text: str
) -> list[ParseDiagnostic]:
    diags: list[ParseDiagnostic] = []
    integrate_seen = False
    for idx, (proposal, offset) in enumerate(items):
        if proposal.op is OperationKind.INTEGRATE:
            if idx != len(items) - 1:
                diags.append(
                    ParseDiagnostic(
                        _byte_offset(text, offset),
                        DiagnosticKind.MISPLACED_INTEGRATE,
                        "integrate must be the last proposal",
                    )
                )
            if integrate_seen:
                diags.append(
                    ParseDiagnostic(
                        _byte_offset(text, offset),
                        DiagnosticKind.DUPLICATE_INTEGRATE,
                        "at most one integrate is allowed",
                    )
                )
            integrate_seen = True
    return diags


def _render_item(p: ActionProposal) -> str:
    if p.op is OperationKind.INTEGRATE:
        return f'"{p.op.value}" {_INTEGRATE_PAYLOAD}'
    if p.op.allows_instruction and p.instruction:
        payload = f"{p.target} :: {p.instruction}" if p.target else f":: {p.instruction}"
    else:
        payload = p.target or ""
    rendered = f'"{p.op.value}"'
    return f"{rendered} {payload}" if payload else rendered


def serialize_proposals(proposals: ProposalSet) -> str:
    """Canonical text form: items joined by '; ' with a trailing ';'."""
    return "; ".join(_render_item(p) for p in proposals.items) + ";"


def validate_set(proposals: ProposalSet) -> list[ParseDiagnostic]:
    """Check set invariants, returning diagnostics instead of raising.

    Offsets point into the canonical serialization of the set.
    """
    diags: list[ParseDiagnostic] = []
    items = proposals.items
    if not items:
        return [ParseDiagnostic(0, DiagnosticKind.EMPTY_INPUT, "proposal set is empty")]
    rendered = serialize_proposals(proposals)
    offsets: list[int] = []
    cursor = 0
    for p in items:
        offsets.append(len(rendered[:cursor].encode("utf-8")))
        cursor += len(_render_item(p)) + 2  # '; ' between items
    integrate_seen = False
    for idx, (p, offset) in enumerate(zip(items, offsets)):
        if p.op.requires_target and not p.target:
            diags.append(
                ParseDiagnostic(offset, DiagnosticKind.MISSING_TARGET, f"{p.op.value} requires a target")
            )
        if p.instruction and not p.op.allows_instruction:
            diags.append(
                ParseDiagnostic(
                    offset,
                    DiagnosticKind.UNEXPECTED_TOKEN,
                    f"{p.op.value} does not take an instruction",
                )
            )
        for text_field in (p.target, p.instruction):
            if text_field and any(c in text_field for c in _FORBIDDEN_PAYLOAD_CHARS):
                diags.append(
                    ParseDiagnostic(
                        offset,
                        DiagnosticKind.UNEXPECTED_TOKEN,
                        f"payload may not contain ';' or ',': {text_field!r}",
                    )
                )
        if p.op is OperationKind.INTEGRATE:
            if p.target not in (None, _INTEGRATE_PAYLOAD):
                diags.append(
                    ParseDiagnostic(
                        offset,
                        DiagnosticKind.UNEXPECTED_TOKEN,
                        f"integrate accepts only '{_INTEGRATE_PAYLOAD}'",
                    )
                )
            if idx != len(items) - 1:
                diags.append(
                    ParseDiagnostic(offset, DiagnosticKind.MISPLACED_INTEGRATE, "integrate must be last")
                )
            if integrate_seen:
                diags.append(
                    ParseDiagnostic(offset, DiagnosticKind.DUPLICATE_INTEGRATE, "duplicate integrate")
                )
            integrate_seen = True
    return diags
