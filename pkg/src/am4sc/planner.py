"""Composition planning over broker-resolved service signatures.

Planning is layered forward chaining over nominal (name + datatype) facts:
starting from the goal inputs, every non-excluded candidate whose inputs are
known fires, layer by layer, until the goal outputs are known or the depth
bound is hit. A backward extraction then searches producer choices for the
node set that reaches the goal at the minimal layer count, preferring
(1) fewest layers, (2) least total cost, (3) lexicographically smallest
sorted service-id sequence. The extraction is exhaustive with cost pruning:
exact at desk scale, exponential only on adversarial registries.

A service appears at most once per plan; fan-out is free but every node
input and every model output is fed by exactly one edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Iterable, Sequence

from am4sc.errors import SchemaError, Unsatisfiable
from am4sc.jsonio import canonical_dumps, take_fields
from am4sc.params import GoalSignature, validate_identifier
from am4sc.registry import BindingInfo, ServiceDescriptor

SCHEMA_VERSION = "am4sc-wf/1"

MODEL_IN = "$in"
MODEL_OUT = "$out"

Fact = tuple[str, str]


@dataclass(frozen=True, order=True)
class Port:
    """One end of a dataflow edge: a node/param pair.

    ``node`` is a node id, or the pseudo-nodes ``$in`` / ``$out`` for the
    model boundary.
    """

    node: str
    name: str

    def encode(self) -> str:
        return f"{self.node}.{self.name}"

    @classmethod
    def decode(cls, text: str) -> "Port":
        if not isinstance(text, str) or "." not in text:
            raise ValueError(f"malformed port reference {text!r}")
        node, name = text.split(".", 1)
        if not node or not name or "." in name:
            raise ValueError(f"malformed port reference {text!r}")
        return cls(node=node, name=name)


@dataclass(frozen=True, order=True)
class Edge:
    src: Port
    dst: Port


@dataclass(frozen=True)
class InvocationNode:
    """One service invocation in a composition."""

    node_id: str
    service_id: str
    endpoint_key: str
    # Planner-side convenience only; not serialized and not part of equality.
    descriptor: ServiceDescriptor | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        validate_identifier(self.node_id, what="node id")
        validate_identifier(self.service_id, what="service id")


@dataclass(frozen=True)
class CompositionModel:
    """A planned DAG of service invocations wired by dataflow edges."""

    nodes: tuple[InvocationNode, ...]
    edges: tuple[Edge, ...]
    goal: GoalSignature

    @classmethod
    def build(
        cls,
        nodes: Iterable[InvocationNode],
        edges: Iterable[Edge],
        goal: GoalSignature,
    ) -> "CompositionModel":
        """Construct in canonical order (nodes by id, edges lexicographic)."""
        model = cls(
            nodes=tuple(sorted(nodes, key=lambda n: n.node_id)),
            edges=tuple(sorted(edges, key=lambda e: (e.src.encode(), e.dst.encode()))),
            goal=goal,
        )
        model.validate()
        return model

    def node_map(self) -> dict[str, InvocationNode]:
        return {n.node_id: n for n in self.nodes}

    def incoming(self) -> dict[str, list[Edge]]:
        """Edges grouped by target node id (model outputs under ``$out``)."""
        by_target: dict[str, list[Edge]] = {}
        for edge in self.edges:
            by_target.setdefault(edge.dst.node, []).append(edge)
        return by_target

    def validate(self) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        by_id = {}
        for node in self.nodes:
            if node.node_id in by_id:
                raise ValueError(f"duplicate node id {node.node_id!r}")
            by_id[node.node_id] = node

        goal_inputs = {p.name: p for p in self.goal.inputs}
        goal_outputs = {p.name: p for p in self.goal.outputs}

        seen_targets: set[Port] = set()
        for edge in self.edges:
            if edge.src.node == MODEL_OUT or edge.dst.node == MODEL_IN:
                raise ValueError(f"edge direction is wrong: {edge.src.encode()} -> {edge.dst.encode()}")
            if edge.src.node == MODEL_IN:
                if edge.src.name not in goal_inputs:
                    raise ValueError(f"edge reads unknown model input {edge.src.name!r}")
            elif edge.src.node not in by_id:
                raise ValueError(f"edge reads unknown node {edge.src.node!r}")
            if edge.dst.node == MODEL_OUT:
                if edge.dst.name not in goal_outputs:
                    raise ValueError(f"edge feeds unknown model output {edge.dst.name!r}")
            elif edge.dst.node not in by_id:
                raise ValueError(f"edge feeds unknown node {edge.dst.node!r}")
            if edge.dst in seen_targets:
                raise ValueError(f"multiple edges feed {edge.dst.encode()}")
            seen_targets.add(edge.dst)

        for name in goal_outputs:
            if Port(MODEL_OUT, name) not in seen_targets:
                raise ValueError(f"model output {name!r} receives no edge")

        self._validate_types(by_id, goal_inputs, goal_outputs)
        self.topological_order()

    def _validate_types(self, by_id, goal_inputs, goal_outputs) -> None:
        # Datatype checks apply only where descriptors are attached; documents
        # deserialized without descriptors get name-level checks only.
        def out_datatype(port: Port) -> str | None:
            if port.node == MODEL_IN:
                return goal_inputs[port.name].datatype
            descriptor = by_id[port.node].descriptor
            if descriptor is None:
                return None
            for p in descriptor.outputs:
                if p.name == port.name:
                    return p.datatype
            raise ValueError(
                f"node {port.node!r} ({descriptor.id}) has no output {port.name!r}"
            )

        def in_datatype(port: Port) -> str | None:
            if port.node == MODEL_OUT:
                return goal_outputs[port.name].datatype
            descriptor = by_id[port.node].descriptor
            if descriptor is None:
                return None
            for p in descriptor.inputs:
                if p.name == port.name:
                    return p.datatype
            raise ValueError(
                f"node {port.node!r} ({descriptor.id}) has no input {port.name!r}"
            )

        fed: dict[str, set[str]] = {nid: set() for nid in by_id}
        for edge in self.edges:
            src_dt = out_datatype(edge.src)
            dst_dt = in_datatype(edge.dst)
            if src_dt is not None and dst_dt is not None and src_dt != dst_dt:
                raise ValueError(
                    f"datatype mismatch on {edge.src.encode()} -> {edge.dst.encode()}: "
                    f"{src_dt} != {dst_dt}"
                )
            if edge.dst.node != MODEL_OUT:
                fed[edge.dst.node].add(edge.dst.name)
        for nid, node in by_id.items():
            if node.descriptor is not None:
                declared = {p.name for p in node.descriptor.inputs}
                if fed[nid] != declared:
                    raise ValueError(
                        f"node {nid!r} inputs {sorted(declared)} vs edges {sorted(fed[nid])}"
                    )

    def topological_order(self) -> list[str]:
        """Kahn's method with id-ascending tie-break; raises on cycles."""
        ids = [n.node_id for n in self.nodes]
        indegree = {nid: 0 for nid in ids}
        downstream: dict[str, list[str]] = {nid: [] for nid in ids}
        for edge in self.edges:
            if edge.src.node in indegree and edge.dst.node in indegree:
                downstream[edge.src.node].append(edge.dst.node)
                indegree[edge.dst.node] += 1
        ready = [nid for nid in ids if indegree[nid] == 0]
        heap: list[str] = []
        for nid in ready:
            heappush(heap, nid)
        order: list[str] = []
        while heap:
            nid = heappop(heap)
            order.append(nid)
            for nxt in downstream[nid]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    heappush(heap, nxt)
        if len(order) != len(ids):
            raise ValueError("composition model contains a cycle")
        return order


@dataclass(frozen=True)
class PlanConstraints:
    max_depth: int = 8
    excluded_services: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        object.__setattr__(self, "excluded_services", frozenset(self.excluded_services))


@dataclass(frozen=True)
class WorkflowDocument:
    """Serialized composition model (the portable workflow format)."""

    schema_version: str
    goal: dict
    nodes: tuple[dict, ...]
    edges: tuple[dict, ...]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "goal": self.goal,
            "nodes": [dict(n) for n in self.nodes],
            "edges": [dict(e) for e in self.edges],
        }

    def canonical_text(self) -> str:
        return canonical_dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, obj: object) -> "WorkflowDocument":
        try:
            data = take_fields(
                obj, ("schema_version", "goal", "nodes", "edges"), where="workflow document"
            )
            nodes = tuple(
                dict(take_fields(n, ("node", "service_id", "endpoint_key"), where="workflow node"))
                for n in data["nodes"]
            )
            edges = tuple(
                dict(take_fields(e, ("from", "to"), where="workflow edge")) for e in data["edges"]
            )
        except (ValueError, TypeError) as exc:
            raise SchemaError(str(exc)) from exc
        return cls(
            schema_version=data["schema_version"], goal=data["goal"], nodes=nodes, edges=edges
        )


def serialize(model: CompositionModel) -> WorkflowDocument:
    """Canonical document: nodes sorted by id, edges lexicographically."""
    nodes = [
        {"node": n.node_id, "service_id": n.service_id, "endpoint_key": n.endpoint_key}
        for n in sorted(model.nodes, key=lambda n: n.node_id)
    ]
    edges = [
        {"from": e.src.encode(), "to": e.dst.encode()}
        for e in sorted(model.edges, key=lambda e: (e.src.encode(), e.dst.encode()))
    ]
    return WorkflowDocument(
        schema_version=SCHEMA_VERSION,
        goal=model.goal.to_json_dict(),
        nodes=tuple(nodes),
        edges=tuple(edges),
    )


def deserialize(doc: WorkflowDocument) -> CompositionModel:
    """Rebuild a model from a document; structural checks, no descriptors."""
    if not isinstance(doc, WorkflowDocument):
        doc = WorkflowDocument.from_json_dict(doc)
    if doc.schema_version != SCHEMA_VERSION:
        raise SchemaError(f"unknown schema_version {doc.schema_version!r}")
    try:
        goal = GoalSignature.from_json_dict(doc.goal)
        nodes = [
            InvocationNode(
                node_id=n["node"], service_id=n["service_id"], endpoint_key=n["endpoint_key"]
            )
            for n in doc.nodes
        ]
        edges = [
            Edge(src=Port.decode(e["from"]), dst=Port.decode(e["to"])) for e in doc.edges
        ]
        return CompositionModel.build(nodes=nodes, edges=edges, goal=goal)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


# -- planning ----------------------------------------------------------------


def plan(
    goal: GoalSignature,
    candidates: Sequence[BindingInfo],
    constraints: PlanConstraints = PlanConstraints(),
) -> CompositionModel:
    """Search for the best composition satisfying ``goal``.

    Raises Unsatisfiable (carrying the unreachable output names) when the
    goal outputs cannot all be derived within ``constraints.max_depth``
    layers.
    """
    pool: dict[str, BindingInfo] = {}
    for binding in sorted(candidates, key=lambda b: (b.descriptor.cost, b.service_id)):
        if binding.service_id not in constraints.excluded_services:
            pool.setdefault(binding.service_id, binding)

    input_facts = {p.fact for p in goal.inputs}
    goal_facts = [p.fact for p in goal.outputs]

    known: set[Fact] = set(input_facts)
    fact_layer: dict[Fact, int] = {f: 0 for f in input_facts}
    unfired = dict(pool)
    layer = 0
    while not all(f in known for f in goal_facts):
        if layer >= constraints.max_depth:
            break
        firing = [
            b for b in unfired.values() if all(p.fact in known for p in b.descriptor.inputs)
        ]
        if not firing:
            break
        layer += 1
        for binding in firing:
            del unfired[binding.service_id]
        for binding in firing:
            for p in binding.descriptor.outputs:
                if p.fact not in fact_layer:
                    fact_layer[p.fact] = layer
                known.add(p.fact)

    missing = {name for (name, dt) in goal_facts if (name, dt) not in known}
    if missing:
        raise Unsatisfiable(missing)

    needs = [f for f in goal_facts if f not in input_facts]
    if not needs:
        return _assemble(goal, {}, input_facts)

    max_layers = max(fact_layer[f] for f in goal_facts)
    fired = {sid: b for sid, b in pool.items() if sid not in unfired}
    producers: dict[Fact, list[BindingInfo]] = {}
    for binding in fired.values():
        for p in binding.descriptor.outputs:
            producers.setdefault(p.fact, []).append(binding)
    for options in producers.values():
        options.sort(key=lambda b: (b.descriptor.cost, b.service_id))

    best_key: tuple[float, tuple[str, ...]] | None = None
    best_members: dict[str, BindingInfo] | None = None
    seen: set[frozenset[str]] = set()

    def consider(chosen: dict[str, BindingInfo]) -> None:
        nonlocal best_key, best_members
        signature = frozenset(chosen)
        if signature in seen:
            return
        seen.add(signature)
        reduced = _contributing_core(goal, chosen, input_facts, max_layers)
        if reduced is None:
            return
        key = (
            sum(b.descriptor.cost for b in reduced.values()),
            tuple(sorted(reduced)),
        )
        if best_key is None or key < best_key:
            best_key, best_members = key, reduced

    def search(chosen: dict[str, BindingInfo], agenda: list[Fact]) -> None:
        if best_key is not None:
            if sum(b.descriptor.cost for b in chosen.values()) > best_key[0]:
                return
        if not agenda:
            consider(chosen)
            return
        fact, rest = agenda[0], agenda[1:]
        covered = any(
            any(p.fact == fact for p in b.descriptor.outputs) for b in chosen.values()
        )
        if covered:
            search(chosen, rest)
        for binding in producers.get(fact, []):
            if binding.service_id in chosen:
                continue
            extra = [
                p.fact
                for p in binding.descriptor.inputs
                if p.fact not in input_facts and p.fact not in rest
            ]
            search({**chosen, binding.service_id: binding}, rest + extra)

    search({}, list(dict.fromkeys(needs)))
    assert best_members is not None, "forward chain succeeded but extraction found no plan"
    return _assemble(goal, best_members, input_facts)


def _within_layers(
    members: dict[str, BindingInfo], input_facts: set[Fact]
) -> dict[str, int] | None:
    """Earliest all-fire layer of each member, or None on deadlock."""
    known = set(input_facts)
    layers: dict[str, int] = {}
    unfired = dict(members)
    layer = 0
    while unfired:
        firing = [
            b for b in unfired.values() if all(p.fact in known for p in b.descriptor.inputs)
        ]
        if not firing:
            return None
        layer += 1
        for binding in firing:
            layers[binding.service_id] = layer
            del unfired[binding.service_id]
        for binding in firing:
            known.update(p.fact for p in binding.descriptor.outputs)
    return layers


def _sources_for(
    members: dict[str, BindingInfo], layers: dict[str, int]
) -> dict[Fact, BindingInfo]:
    """Deterministic producer choice per fact: earliest layer, then id."""
    choice: dict[Fact, BindingInfo] = {}
    for binding in members.values():
        for p in binding.descriptor.outputs:
            current = choice.get(p.fact)
            if current is None or (layers[binding.service_id], binding.service_id) < (
                layers[current.service_id],
                current.service_id,
            ):
                choice[p.fact] = binding
    return choice


def _contributing_core(
    goal: GoalSignature,
    chosen: dict[str, BindingInfo],
    input_facts: set[Fact],
    max_layers: int,
) -> dict[str, BindingInfo] | None:
    """Shrink a cover to the nodes that actually feed the goal outputs.

    Returns None when the cover cannot reach every goal output within
    ``max_layers`` rounds.
    """
    members = dict(chosen)
    while True:
        layers = _within_layers(members, input_facts)
        if layers is None:
            return None
        sources = _sources_for(members, layers)
        needed = [p.fact for p in goal.outputs if p.fact not in input_facts]
        if any(f not in sources for f in needed):
            return None
        if any(layers[sources[f].service_id] > max_layers for f in needed):
            return None
        keep: dict[str, BindingInfo] = {}
        stack = [sources[f] for f in needed]
        while stack:
            binding = stack.pop()
            if binding.service_id in keep:
                continue
            keep[binding.service_id] = binding
            for p in binding.descriptor.inputs:
                if p.fact not in input_facts:
                    stack.append(sources[p.fact])
        if set(keep) == set(members):
            return keep
        members = keep


def _assemble(
    goal: GoalSignature,
    members: dict[str, BindingInfo],
    input_facts: set[Fact],
) -> CompositionModel:
    """Build the canonical model for a chosen member set."""
    edges: list[Edge] = []
    if members:
        layers = _within_layers(members, input_facts)
        assert layers is not None
        sources = _sources_for(members, layers)
    else:
        sources = {}
    for sid, binding in members.items():
        for p in binding.descriptor.inputs:
            if p.fact in input_facts:
                src = Port(MODEL_IN, p.name)
            else:
                src = Port(sources[p.fact].service_id, p.name)
            edges.append(Edge(src=src, dst=Port(sid, p.name)))
    for p in goal.outputs:
        if p.fact in input_facts:
            src = Port(MODEL_IN, p.name)
        else:
            src = Port(sources[p.fact].service_id, p.name)
        edges.append(Edge(src=src, dst=Port(MODEL_OUT, p.name)))
    nodes = [
        InvocationNode(
            node_id=sid,
            service_id=sid,
            endpoint_key=binding.endpoint_key,
            descriptor=binding.descriptor,
        )
        for sid, binding in members.items()
    ]
    return CompositionModel.build(nodes=nodes, edges=edges, goal=goal)


def replan(
    goal: GoalSignature,
    candidates: Sequence[BindingInfo],
    previous: CompositionModel,
    blamed: set[str],
    constraints: PlanConstraints = PlanConstraints(),
) -> CompositionModel:
    """Plan again while avoiding every blamed service.

    ``previous`` documents what is being replaced; the exclusion set is what
    actually steers the new search.
    """
    if not blamed:
        raise ValueError("replan needs a nonempty blamed set")
    merged = PlanConstraints(
        max_depth=constraints.max_depth,
        excluded_services=constraints.excluded_services | frozenset(blamed),
    )
    return plan(goal, candidates, merged)


def refactor_dedup(model: CompositionModel) -> CompositionModel:
    """Merge nodes that invoke the same service on identical input sources."""
    nodes = {n.node_id: n for n in model.nodes}
    edges = list(model.edges)
    while True:
        source_maps: dict[str, tuple[tuple[str, str], ...]] = {nid: () for nid in nodes}
        collected: dict[str, list[tuple[str, str]]] = {nid: [] for nid in nodes}
        for edge in edges:
            if edge.dst.node in collected:
                collected[edge.dst.node].append((edge.dst.name, edge.src.encode()))
        for nid, pairs in collected.items():
            source_maps[nid] = tuple(sorted(pairs))

        groups: dict[tuple[str, tuple], list[str]] = {}
        for nid, node in nodes.items():
            groups.setdefault((node.service_id, source_maps[nid]), []).append(nid)

        remap: dict[str, str] = {}
        for group in groups.values():
            if len(group) > 1:
                group.sort()
                keep = group[0]
                for dropped in group[1:]:
                    remap[dropped] = keep
        if not remap:
            break

        rewired: list[Edge] = []
        for edge in edges:
            if edge.dst.node in remap:
                continue  # the kept node already has this input edge
            src = edge.src
            if src.node in remap:
                src = Port(remap[src.node], src.name)
            rewired.append(Edge(src=src, dst=edge.dst))
        edges = rewired
        nodes = {nid: node for nid, node in nodes.items() if nid not in remap}

    return CompositionModel.build(nodes=nodes.values(), edges=edges, goal=model.goal)
