"""Exception hierarchy shared across the package.

Class names double as the ``kind`` strings carried in wire-level error
envelopes, so they are spelled without an ``Error`` suffix.
"""

from __future__ import annotations


class VisionFlowError(Exception):
    """Base class for all domain errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# core
class EmptyLabel(VisionFlowError):
    pass


class DimensionMismatch(VisionFlowError):
    pass


# prompting
class EmptyInput(VisionFlowError):
    pass


class BackendUnavailable(VisionFlowError):
    pass


class BackendMalformed(VisionFlowError):
    pass


class UnplannableRequest(VisionFlowError):
    pass


# planning
class NoCandidates(VisionFlowError):
    pass


class InvalidProposalSet(VisionFlowError):
    pass


class PlanningFailed(VisionFlowError):
    pass


# registry
class DuplicateModelId(VisionFlowError):
    pass


class InvalidDescriptor(VisionFlowError):
    pass


class NoCapableModel(VisionFlowError):
    pass


# executors
class CapabilityMismatch(VisionFlowError):
    pass


class RemoteUnavailable(VisionFlowError):
    pass


class RemoteMalformed(VisionFlowError):
    pass


class VerifierUnavailable(VisionFlowError):
    pass


# engine
class StorageFailure(VisionFlowError):
    pass


class RunNotFound(VisionFlowError):
    pass


class CompositingFailure(VisionFlowError):
    pass


# interface
class SchemaViolation(VisionFlowError):
    pass


class WireFormatError(VisionFlowError):
    """Raised by codecs; callers re-map to RemoteMalformed or SchemaViolation."""
