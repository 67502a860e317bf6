"""visionflow: natural-language requests over images, planned and executed.

A request is decomposed into action proposals, scored and compiled into a
dependency DAG over capability-matched executors, run with a verify-and-retry
loop, and composited into a final response. Mock executors over synthetic
scenes make the whole workflow testable at desk scale.
"""

from .core import (
    ActionProposal,
    BBox,
    Detection,
    ImageRef,
    InstanceMask,
    MaskRLE,
    OperationKind,
    ProposalSet,
    SceneShape,
    SceneSpec,
    mask_jaccard,
    normalize_label,
    rasterize_scene,
    rle_decode,
    rle_encode,
)
from .dsl import ParseDiagnostic, ProposalParseError, parse_proposals, serialize_proposals, validate_set
from .engine import Engine, EngineConfig, NodeResult, NodeStatus, RunRecord
from .executors import ExecInput, ExecOutput, VerifierScoreRecord, execute, remote_execute, verify
from .planning import (
    PlanDAG,
    PlanNode,
    ProposalScore,
    build_dag,
    congruence,
    discrepancy,
    evaluate_backend,
    regularizer,
    select_best,
)
from .prompting import (
    ContextExample,
    PlannerBackendDescriptor,
    PromptConfig,
    build_prompt,
    generate_candidates,
    rule_based_plan,
)
from .registry import ModelDescriptor, ModelRegistry, default_registry

__version__ = "0.1.0"

__all__ = [
    "ActionProposal",
    "BBox",
    "Detection",
    "Engine",
    "EngineConfig",
    "ExecInput",
    "ExecOutput",
    "ImageRef",
    "InstanceMask",
    "MaskRLE",
    "ModelDescriptor",
    "ModelRegistry",
    "NodeResult",
    "NodeStatus",
    "OperationKind",
    "ParseDiagnostic",
    "PlanDAG",
    "PlanNode",
    "PlannerBackendDescriptor",
    "ProposalParseError",
    "ProposalScore",
    "ProposalSet",
    "PromptConfig",
    "ContextExample",
    "RunRecord",
    "SceneShape",
    "SceneSpec",
    "VerifierScoreRecord",
    "build_dag",
    "build_prompt",
    "congruence",
    "default_registry",
    "discrepancy",
    "evaluate_backend",
    "execute",
    "generate_candidates",
    "mask_jaccard",
    "normalize_label",
    "parse_proposals",
    "rasterize_scene",
    "regularizer",
    "remote_execute",
    "rle_decode",
    "rle_encode",
    "rule_based_plan",
    "select_best",
    "serialize_proposals",
    "validate_set",
    "verify",
]
