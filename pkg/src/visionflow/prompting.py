"""In-context prompt assembly and pluggable planner backends.

A planner backend turns a prompt into one or more candidate proposal texts.
Three kinds exist: a deterministic rule-based planner (also the fallback when
a remote LLM is unreachable), a scripted replay backend for tests and fixed
pipelines, and a remote HTTP client.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import requests

from . import dsl
from .core import (
    OPERATION_NAMES,
    ActionProposal,
    OperationKind,
    ProposalSet,
    normalize_text,
)
from .errors import BackendMalformed, BackendUnavailable, EmptyInput, UnplannableRequest

DEFAULT_REMOTE_TIMEOUT = 30.0

_PROMPT_HEADER_PREFIX = "Please generate action proposals based on the following operation candidates: "
_PROMPT_HEADER_SUFFIX = ", .... The output should be as concise as possible."


@dataclass(frozen=True)
class ContextExample:
    """One paired demonstration: a user request and its proposal text."""

    input: str
    output: str


@dataclass(frozen=True)
class PromptConfig:
    op_candidates: tuple[str, ...]
    examples: tuple[ContextExample, ...] = ()
    max_examples: int = 4

    def __post_init__(self) -> None:
        if not self.op_candidates:
            raise ValueError("op_candidates may not be empty")
        unknown = [c for c in self.op_candidates if c not in OPERATION_NAMES]
        if unknown:
            raise ValueError(f"unknown operation candidates: {unknown}")
        if self.max_examples < 1:
            raise ValueError("max_examples must be at least 1")
        for ex in self.examples:
            dsl.parse_proposals(ex.output)  # raises if a demonstration is unusable


class BackendKind(str, Enum):
    RULE_BASED = "RuleBased"
    REMOTE = "Remote"
    SCRIPTED = "Scripted"


@dataclass(frozen=True)
class PlannerBackendDescriptor:
    id: str
    kind: BackendKind
    endpoint: str | None = None
    n_candidates: int = 1

    def __post_init__(self) -> None:
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be at least 1")
        if (self.kind is BackendKind.REMOTE) != (self.endpoint is not None):
            raise ValueError("endpoint must be present exactly when kind is Remote")


def build_prompt(cfg: PromptConfig, user_input: str) -> str:
    """Assemble the planner prompt: instruction header, demonstrations, query.

    The layout is byte-stable: a header line, then each included example as an
    Input/Output block, then the user's Input with a bare trailing "Output:",
    all separated by blank lines and with no trailing newline.
    """
    if not user_input.strip():
        raise EmptyInput("user input is empty")
    candidates = ", ".join(f'"{c}"' for c in cfg.op_candidates)
    parts = [_PROMPT_HEADER_PREFIX + candidates + _PROMPT_HEADER_SUFFIX]
    for example in cfg.examples[: cfg.max_examples]:
        parts.append(f"Input: {example.input}\nOutput: {example.output}")
    parts.append(f"Input: {user_input}\nOutput:")
    return "\n\n".join(parts)


def user_input_from_prompt(prompt: str) -> str:
    """Recover the final Input line from a prompt built by build_prompt."""
    marker = "Input: "
    idx = prompt.rfind(marker)
    if idx < 0:
        return prompt
    tail = prompt[idx + len(marker) :]
    return tail.split("\nOutput:", 1)[0]


# --- rule-based planning ----------------------------------------------------

_VERB_RULES = {
    **{v: "locate" for v in ("find", "locate", "detect", "identify")},
    **{v: "segment" for v in ("highlight", "segment", "mask")},
    **{v: "edit" for v in ("replace", "cover", "remove")},
    **{v: "generate" for v in ("generate", "add", "create", "make")},
}
_DETERMINERS = frozenset({"the", "a", "an", "all", "any"})
_STOP_WORDS = frozenset({"in", "on", "with"})
_PRONOUNS = frozenset({"them", "it"})
_CLAUSE_PUNCT = frozenset({".", ";", "!", "?"})
_PUNCT_TOKENS = frozenset({".", ",", ";", "!", "?"})
_TOKEN_RE = re.compile(r"[^\s.,;!?]+|[.,;!?]")


def _split_clauses(tokens: list[str]) -> list[list[str]]:
    clauses: list[list[str]] = []
    current: list[str] = []

    def flush() -> None:
        nonlocal current
        if current:
            clauses.append(current)
        current = []

    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok in _CLAUSE_PUNCT or tok == "then":
            flush()
            i += 1
            continue
        if tok in ("and", ","):
            j = i + 1
            if j < len(tokens) and tokens[j] == "then":
                j += 1
            if j < len(tokens) and tokens[j] in _VERB_RULES:
                flush()
                i = j  # drop the connector (and any 'then'), keep the verb
                continue
            current.append(tok)
            i += 1
            continue
        current.append(tok)
        i += 1
    flush()
    return clauses


def _extract_targets(
    target_tokens: list[str], prior_targets: list[str]
) -> tuple[list[str], list[str]]:
    """Split a conjunction of phrases into targets, resolving them/it pronouns.

    Returns (targets in order, newly introduced concrete targets).
    """
    phrases: list[list[str]] = [[]]
    for tok in target_tokens:
        if tok == "and":
            phrases.append([])
        else:
            phrases[-1].append(tok)
    targets: list[str] = []
    introduced: list[str] = []
    for phrase in phrases:
        while phrase and phrase[0] in _DETERMINERS:
            phrase = phrase[1:]
        if not phrase:
            continue
        if phrase[0] in _PRONOUNS:
            for t in prior_targets:
                if t not in targets:
                    targets.append(t)
            continue
        t = " ".join(phrase)
        if t not in targets:
            targets.append(t)
        if t not in introduced:
            introduced.append(t)
    return targets, introduced


def rule_based_plan(user_input: str) -> ProposalSet:
    """Deterministic intent-table planner.

    Per clause, the first matching verb picks the expansion: locate verbs emit
    Locate; highlight/segment/mask emit Locate then Segment; replace/cover/
    remove emit Locate, Segment, and an Edit carrying the rest of the clause;
    generation verbs (or a clause with no verb) emit a whole-request Generate.
    Duplicate proposals keep their last occurrence, and a multi-clause request
    touching two or more distinct targets gains a trailing Integrate.
    """
    text = normalize_text(user_input)
    if not text:
        raise UnplannableRequest("request is blank")
    full_request = " ".join(t for t in _TOKEN_RE.findall(text) if t not in _PUNCT_TOKENS)
    clauses = _split_clauses(_TOKEN_RE.findall(text))
    emitted: list[ActionProposal] = []
    prior_targets: list[str] = []
    for clause in clauses:
        verb_idx = next((i for i, t in enumerate(clause) if t in _VERB_RULES), None)
        rule = _VERB_RULES[clause[verb_idx]] if verb_idx is not None else "generate"
        if rule == "generate":
            emitted.append(
                ActionProposal(
                    OperationKind.GENERATE, target="image", instruction=full_request or None
                )
            )
            continue
        after = clause[verb_idx + 1 :]
        trunc = next(
            (i for i, t in enumerate(after) if t in _STOP_WORDS or t in (",", ".")),
            len(after),
        )
        targets, introduced = _extract_targets(after[:trunc], prior_targets)
        instruction = None
        if rule == "edit":
            remainder = clause[: verb_idx + 1] + after[trunc:]
            instruction = " ".join(t for t in remainder if t not in _PUNCT_TOKENS) or None
        for t in targets:
            emitted.append(ActionProposal(OperationKind.LOCATE, target=t))
            if rule in ("segment", "edit"):
                emitted.append(ActionProposal(OperationKind.SEGMENT, target=t))
            if rule == "edit":
                emitted.append(ActionProposal(OperationKind.EDIT, target=t, instruction=instruction))
        for t in introduced:
            if t not in prior_targets:
                prior_targets.append(t)
    # Keep the last occurrence of any exact duplicate.
    seen: set[ActionProposal] = set()
    deduped: list[ActionProposal] = []
    for p in reversed(emitted):
        if p not in seen:
            deduped.append(p)
            seen.add(p)
    deduped.reverse()
    if not deduped:
        deduped = [
            ActionProposal(OperationKind.GENERATE, target="image", instruction=full_request or None)
        ]
    distinct = {p.target for p in deduped if p.target and p.target != "image"}
    if len(clauses) >= 2 and len(distinct) >= 2:
        deduped.append(ActionProposal(OperationKind.INTEGRATE))
    return ProposalSet(tuple(deduped))


# --- backends ----------------------------------------------------------------


class RuleBasedBackend:
    """Planner that applies the intent table to the prompt's final Input line."""

    id = "rule-based"
    n_candidates = 1

    def complete(self, prompt: str, n: int) -> list[str]:
        request = user_input_from_prompt(prompt)
        return [dsl.serialize_proposals(rule_based_plan(request))]


class ScriptedBackend:
    """Replays canned reply lists in order; raises once exhausted."""

    def __init__(self, replies: list[list[str]], backend_id: str = "scripted", n_candidates: int = 1):
        self.id = backend_id
        self.n_candidates = n_candidates
        self._replies = list(replies)
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path, backend_id: str = "scripted") -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        replies = data.get("replies")
        if not isinstance(replies, list):
            raise BackendMalformed(f"scripted file {path} lacks a 'replies' list")
        return cls(replies, backend_id=backend_id)

    def complete(self, prompt: str, n: int) -> list[str]:
        if self._cursor >= len(self._replies):
            raise BackendUnavailable(f"scripted backend {self.id} is exhausted")
        reply = self._replies[self._cursor]
        self._cursor += 1
        return list(reply)


class RemoteBackend:
    """HTTP client for the completion protocol: POST {endpoint}/v1/complete."""

    def __init__(
        self,
        endpoint: str,
        backend_id: str = "remote",
        n_candidates: int = 1,
        timeout: float = DEFAULT_REMOTE_TIMEOUT,
    ):
        self.id = backend_id
        self.endpoint = endpoint.rstrip("/")
        self.n_candidates = n_candidates
        self.timeout = timeout

    def complete(self, prompt: str, n: int) -> list[str]:
        try:
            resp = requests.post(
                f"{self.endpoint}/v1/complete",
                json={"prompt": prompt, "n": n},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"planner at {self.endpoint} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(f"planner at {self.endpoint} returned HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise BackendMalformed(f"planner reply is not JSON: {exc}") from exc
        candidates = body.get("candidates") if isinstance(body, dict) else None
        if not isinstance(candidates, list):
            raise BackendMalformed("planner reply lacks a 'candidates' list")
        return candidates


def make_backend(
    descriptor: PlannerBackendDescriptor,
    scripted_replies: list[list[str]] | None = None,
    scripted_path: str | Path | None = None,
    timeout: float = DEFAULT_REMOTE_TIMEOUT,
):
    if descriptor.kind is BackendKind.RULE_BASED:
        return RuleBasedBackend()
    if descriptor.kind is BackendKind.REMOTE:
        assert descriptor.endpoint is not None
        return RemoteBackend(
            descriptor.endpoint,
            backend_id=descriptor.id,
            n_candidates=descriptor.n_candidates,
            timeout=timeout,
        )
    if scripted_path is not None:
        backend = ScriptedBackend.from_file(scripted_path, backend_id=descriptor.id)
        backend.n_candidates = descriptor.n_candidates
        return backend
    return ScriptedBackend(
        scripted_replies or [], backend_id=descriptor.id, n_candidates=descriptor.n_candidates
    )


def generate_candidates(backend, prompt: str, n: int | None = None) -> list[str]:
    """Ask a backend for up to n raw candidate texts; never returns empty."""
    limit = n if n is not None else getattr(backend, "n_candidates", 1)
    raw = backend.complete(prompt, limit)
    if not isinstance(raw, list) or not raw:
        raise BackendMalformed(f"backend {getattr(backend, 'id', '?')} returned no candidates")
    if any(not isinstance(c, str) or not c.strip() for c in raw):
        raise BackendMalformed(f"backend {getattr(backend, 'id', '?')} returned a non-text reply")
    return raw[:limit]


TABLE_EXAMPLE = ContextExample(
    input="highlight dogs and frogs in the image",
    output='"locate" dogs; "segment" dogs; "locate" frogs, "segment" frogs;',
)

MULTI_IMAGE_EXAMPLE = ContextExample(
    input="Find dogs and lemons in the images and then highlight them only",
    output=(
        '"locate" dogs; "segment" dogs; "locate" lemons; "segment" lemons; '
        '"integrate" all results;'
    ),
)


def default_prompt_config() -> PromptConfig:
    return PromptConfig(
        op_candidates=tuple(op.value for op in OperationKind),
        examples=(TABLE_EXAMPLE, MULTI_IMAGE_EXAMPLE),
        max_examples=4,
    )
