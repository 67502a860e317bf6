"""Capability catalog of executors and the deterministic selection policy."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import OperationKind
from .errors import DuplicateModelId, InvalidDescriptor, NoCapableModel


class ConcurrencyClass(str, Enum):
    CONCURRENT = "Concurrent"
    SERIAL = "Serial"


@dataclass(frozen=True)
class ModelDescriptor:
    """A registered executor: what it can do, how good it is, how to reach it.

    ``endpoint`` is either an http(s) URL for a remote model server or the
    name of a builtin mock; when omitted the id doubles as the builtin name.
    """

    id: str
    capabilities: frozenset[OperationKind]
    quality: float = 0.5
    cost: float = 0.0
    accepts_regions: bool = False
    concurrency_class: ConcurrencyClass = ConcurrencyClass.CONCURRENT
    endpoint: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidDescriptor("model id may not be empty")
        if not self.capabilities:
            raise InvalidDescriptor(f"model {self.id} has no capabilities")
        if not 0.0 <= self.quality <= 1.0:
            raise InvalidDescriptor(f"model {self.id} quality outside [0, 1]: {self.quality}")
        if self.cost < 0.0:
            raise InvalidDescriptor(f"model {self.id} cost is negative: {self.cost}")


def _policy_key(desc: ModelDescriptor) -> tuple[float, float, str]:
    # Quality descending, then cost ascending, then id for a total order.
    return (-desc.quality, desc.cost, desc.id)


class ModelRegistry:
    """Thread-safe, read-mostly catalog with snapshot selection semantics."""

    def __init__(self, models: tuple[ModelDescriptor, ...] | list[ModelDescriptor] = ()):
        self._lock = threading.RLock()
        self._models: dict[str, ModelDescriptor] = {}
        for m in models:
            self.register(m)

    def register(self, desc: ModelDescriptor) -> None:
        with self._lock:
            if desc.id in self._models:
                raise DuplicateModelId(f"model id already registered: {desc.id}")
            self._models[desc.id] = desc

    def get(self, model_id: str) -> ModelDescriptor | None:
        with self._lock:
            return self._models.get(model_id)

    def __contains__(self, model_id: str) -> bool:
        return self.get(model_id) is not None

    def __len__(self) -> int:
        with self._lock:
            return len(self._models)

    def descriptors(self) -> list[ModelDescriptor]:
        with self._lock:
            return sorted(self._models.values(), key=lambda m: m.id)

    def select_model(self, op: OperationKind, exclude: frozenset[str] | set[str] = frozenset()) -> ModelDescriptor:
        """Highest-ranked capable model outside ``exclude``."""
        chain = [m for m in self.fallback_chain(op) if m.id not in exclude]
        if not chain:
            raise NoCapableModel(f"no model supports {op.value} after exclusions")
        return chain[0]

    def fallback_chain(self, op: OperationKind) -> list[ModelDescriptor]:
        """Every capable model, best first."""
        with self._lock:
            capable = [m for m in self._models.values() if op in m.capabilities]
        if not capable:
            raise NoCapableModel(f"no model supports {op.value}")
        return sorted(capable, key=_policy_key)

    # --- persistence ---

    def to_dict(self) -> dict:
        return {"models": [descriptor_to_dict(m) for m in self.descriptors()]}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelRegistry":
        return cls([descriptor_from_dict(d) for d in data.get("models", [])])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelRegistry":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def descriptor_to_dict(desc: ModelDescriptor) -> dict:
    return {
        "id": desc.id,
        "capabilities": sorted(op.value for op in desc.capabilities),
        "quality": desc.quality,
        "cost": desc.cost,
        "accepts_regions": desc.accepts_regions,
        "concurrency_class": desc.concurrency_class.value,
        "endpoint": desc.endpoint,
    }


def descriptor_from_dict(data: dict) -> ModelDescriptor:
    try:
        return ModelDescriptor(
            id=str(data["id"]),
            capabilities=frozenset(OperationKind(c) for c in data["capabilities"]),
            quality=float(data.get("quality", 0.5)),
            cost=float(data.get("cost", 0.0)),
            accepts_regions=bool(data.get("accepts_regions", False)),
            concurrency_class=ConcurrencyClass(data.get("concurrency_class", "Concurrent")),
            endpoint=data.get("endpoint"),
        )
    except (KeyError, ValueError) as exc:
        raise InvalidDescriptor(f"bad model descriptor: {exc}") from exc


def default_registry() -> ModelRegistry:
    """The shipped mock roster: detector, segmenter, generator, captioner."""
    return ModelRegistry(
        [
            ModelDescriptor(
                id="mock-detector",
                capabilities=frozenset({OperationKind.LOCATE, OperationKind.CLASSIFY}),
                quality=0.85,
                cost=0.1,
            ),
            ModelDescriptor(
                id="mock-segmenter",
                capabilities=frozenset({OperationKind.SEGMENT}),
                quality=0.9,
                cost=0.2,
                accepts_regions=True,
            ),
            ModelDescriptor(
                id="mock-generator",
                capabilities=frozenset({OperationKind.GENERATE, OperationKind.EDIT}),
                quality=0.8,
                cost=0.5,
            ),
            ModelDescriptor(
                id="mock-captioner",
                capabilities=frozenset({OperationKind.CAPTION}),
                quality=0.75,
                cost=0.1,
            ),
            ModelDescriptor(
                id="engine-native",
                capabilities=frozenset({OperationKind.INTEGRATE}),
                quality=1.0,
                cost=0.0,
            ),
        ]
    )
