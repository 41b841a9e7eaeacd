"""Service descriptor registry and broker.

The registry holds immutable service descriptors, answers capability queries
(who produces this parameter?) and resolves composition queries into binding
information. Descriptors are frozen; every mutation swaps in a fresh table
copy under a single writer lock, so concurrent readers always observe a
consistent snapshot without locking.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable

from am4sc.errors import DuplicateId, InvalidDescriptor, NoCandidates
from am4sc.jsonio import take_fields
from am4sc.params import TypedParam, unique_params, validate_identifier


@dataclass(frozen=True)
class ServiceDescriptor:
    """The typed signature and metadata advertising one service."""

    id: str
    name: str
    version: int
    provider: str
    inputs: tuple[TypedParam, ...]
    outputs: tuple[TypedParam, ...]
    cost: float
    tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        try:
            validate_identifier(self.id, what="service id")
            object.__setattr__(self, "inputs", unique_params(self.inputs, side="input"))
            object.__setattr__(self, "outputs", unique_params(self.outputs, side="output"))
            object.__setattr__(self, "tags", frozenset(self.tags))
            if not self.outputs:
                raise ValueError("descriptor needs at least one output")
            if not isinstance(self.version, int) or isinstance(self.version, bool) or self.version < 1:
                raise ValueError(f"version must be a positive integer, got {self.version!r}")
            if isinstance(self.cost, bool) or not isinstance(self.cost, (int, float)) or self.cost < 0:
                raise ValueError(f"cost must be a nonnegative number, got {self.cost!r}")
            object.__setattr__(self, "cost", float(self.cost))
            if not all(isinstance(t, str) and t for t in self.tags):
                raise ValueError("tags must be nonempty strings")
        except ValueError as exc:
            raise InvalidDescriptor(str(exc)) from exc

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "version": self.version,
            "provider": self.provider,
            "inputs": [p.to_json_dict() for p in self.inputs],
            "outputs": [p.to_json_dict() for p in self.outputs],
            "cost": self.cost,
            "tags": sorted(self.tags),
        }

    @classmethod
    def from_json_dict(cls, obj: object) -> "ServiceDescriptor":
        try:
            data = take_fields(
                obj,
                ("id", "name", "version", "provider", "inputs", "outputs", "cost", "tags"),
                where="service descriptor",
            )
            inputs = tuple(TypedParam.from_json_dict(p, where="descriptor.inputs") for p in data["inputs"])
            outputs = tuple(TypedParam.from_json_dict(p, where="descriptor.outputs") for p in data["outputs"])
        except ValueError as exc:
            raise InvalidDescriptor(str(exc)) from exc
        return cls(
            id=data["id"],
            name=data["name"],
            version=data["version"],
            provider=data["provider"],
            inputs=inputs,
            outputs=outputs,
            cost=data["cost"],
            tags=frozenset(data["tags"]),
        )


@dataclass(frozen=True)
class BindingInfo:
    """What a consumer needs to invoke a discovered service."""

    service_id: str
    endpoint_key: str
    descriptor: ServiceDescriptor

    def __post_init__(self):
        if self.descriptor.id != self.service_id:
            raise ValueError(
                f"binding for {self.service_id!r} carries descriptor {self.descriptor.id!r}"
            )


@dataclass(frozen=True)
class ServiceQuery:
    """A composition request: which outputs are required, what is on hand."""

    required_outputs: tuple[TypedParam, ...]
    available_inputs: tuple[TypedParam, ...] = ()
    tag_filter: frozenset[str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "required_outputs", tuple(self.required_outputs))
        object.__setattr__(self, "available_inputs", tuple(self.available_inputs))
        if self.tag_filter is not None:
            object.__setattr__(self, "tag_filter", frozenset(self.tag_filter))
        if not self.required_outputs:
            raise ValueError("query needs at least one required output")

    def to_json_dict(self) -> dict:
        return {
            "required_outputs": [p.to_json_dict() for p in self.required_outputs],
            "available_inputs": [p.to_json_dict() for p in self.available_inputs],
            "tag_filter": None if self.tag_filter is None else sorted(self.tag_filter),
        }

    @classmethod
    def from_json_dict(cls, obj: object) -> "ServiceQuery":
        data = take_fields(
            obj, ("required_outputs", "available_inputs", "tag_filter"), where="service query"
        )
        tag_filter = data["tag_filter"]
        return cls(
            required_outputs=tuple(
                TypedParam.from_json_dict(p, where="query.required_outputs")
                for p in data["required_outputs"]
            ),
            available_inputs=tuple(
                TypedParam.from_json_dict(p, where="query.available_inputs")
                for p in data["available_inputs"]
            ),
            tag_filter=None if tag_filter is None else frozenset(tag_filter),
        )


class Registry:
    """Searchable directory of service descriptors.

    Single-writer, many-reader: registrations serialize on a lock and publish
    a fresh descriptor table; queries are pure functions of the snapshot they
    read.
    """

    def __init__(self):
        self._descriptors: dict[str, ServiceDescriptor] = {}
        self._endpoints: dict[str, str] = {}
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._descriptors)

    def register(self, descriptor: ServiceDescriptor) -> str:
        """Add a descriptor; a strictly newer version replaces the old one."""
        if not isinstance(descriptor, ServiceDescriptor):
            raise InvalidDescriptor(f"not a descriptor: {descriptor!r}")
        with self._write_lock:
            existing = self._descriptors.get(descriptor.id)
            if existing is not None and descriptor.version <= existing.version:
                raise DuplicateId(
                    f"service {descriptor.id!r} already registered at version "
                    f"{existing.version} (got {descriptor.version})"
                )
            table = dict(self._descriptors)
            table[descriptor.id] = descriptor
            self._descriptors = table
        return descriptor.id

    def set_endpoint(self, service_id: str, endpoint_key: str) -> None:
        """Record which simulated endpoint answers for a service."""
        if service_id not in self._descriptors:
            raise InvalidDescriptor(f"cannot bind endpoint for unregistered service {service_id!r}")
        with self._write_lock:
            endpoints = dict(self._endpoints)
            endpoints[service_id] = endpoint_key
            self._endpoints = endpoints

    def endpoint_for(self, service_id: str) -> str:
        # Services without an explicit endpoint fall back to their own id;
        # binding then fails loudly at instantiation if no behavior exists.
        return self._endpoints.get(service_id, service_id)

    def get(self, service_id: str) -> ServiceDescriptor | None:
        return self._descriptors.get(service_id)

    def list_descriptors(self) -> list[ServiceDescriptor]:
        return [self._descriptors[sid] for sid in sorted(self._descriptors)]

    def find_producers(
        self, param: TypedParam, tag_filter: Iterable[str] | None = None
    ) -> list[ServiceDescriptor]:
        """Descriptors having an output that nominally matches ``param``."""
        return _producers_in(self._descriptors, param, tag_filter)

    def resolve(self, query: ServiceQuery) -> list[BindingInfo]:
        """Binding info for every descriptor producing a required output."""
        snapshot = self._descriptors
        found: dict[str, ServiceDescriptor] = {}
        for param in query.required_outputs:
            for descriptor in _producers_in(snapshot, param, query.tag_filter):
                found.setdefault(descriptor.id, descriptor)
        if not found:
            names = ", ".join(sorted({p.name for p in query.required_outputs}))
            raise NoCandidates(f"no registered service produces any of: {names}")
        ordered = sorted(found.values(), key=lambda d: (d.cost, d.id))
        return [
            BindingInfo(service_id=d.id, endpoint_key=self.endpoint_for(d.id), descriptor=d)
            for d in ordered
        ]

    def to_json_list(self) -> list[dict]:
        return [d.to_json_dict() for d in self.list_descriptors()]


def _producers_in(
    snapshot: dict[str, ServiceDescriptor],
    param: TypedParam,
    tag_filter: Iterable[str] | None,
) -> list[ServiceDescriptor]:
    wanted = None if tag_filter is None else frozenset(tag_filter)
    hits = [
        d
        for d in snapshot.values()
        if any(out == param for out in d.outputs) and (wanted is None or d.tags & wanted)
    ]
    hits.sort(key=lambda d: (d.cost, d.id))
    return hits
