"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately reimplement behavior from first principles
(subset enumeration, direct arithmetic) so they never share a code path with
the engine operations they check.
"""

from __future__ import annotations

import random
from itertools import combinations

from am4sc.backlog import FeatureRequest
from am4sc.expr import Expression
from am4sc.params import GoalSignature, TypedParam
from am4sc.planner import MODEL_IN, MODEL_OUT, CompositionModel, Edge, InvocationNode, Port
from am4sc.registry import BindingInfo, ServiceDescriptor
from am4sc.runtime import MockBehavior


def P(name: str, datatype: str = "real") -> TypedParam:
    return TypedParam(name=name, datatype=datatype)


def descriptor(
    sid: str,
    inputs: list[TypedParam],
    outputs: list[TypedParam],
    cost: float = 1.0,
    tags: set[str] | None = None,
    version: int = 1,
) -> ServiceDescriptor:
    return ServiceDescriptor(
        id=sid,
        name=sid,
        version=version,
        provider="test",
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        cost=cost,
        tags=frozenset(tags or {"test"}),
    )


def binding(d: ServiceDescriptor, endpoint: str | None = None) -> BindingInfo:
    return BindingInfo(service_id=d.id, endpoint_key=endpoint or d.id, descriptor=d)


def feature(
    fid: str,
    outputs: list[TypedParam],
    inputs: list[TypedParam] = (),
    priority: int = 5,
    tags: set[str] | None = None,
) -> FeatureRequest:
    return FeatureRequest(
        id=fid,
        title=fid,
        description="",
        customer_priority=priority,
        tags=frozenset(tags or {"test"}),
        goal_inputs=tuple(inputs),
        goal_outputs=tuple(outputs),
    )


# -- selection oracle ---------------------------------------------------------


def brute_force_select(scores: dict[str, float], capacity: int) -> set[str]:
    """Best capacity-subset by total score; ties by smallest sorted id tuple."""
    ids = sorted(scores)
    k = min(capacity, len(ids))
    best: tuple[float, tuple[str, ...]] | None = None
    for combo in combinations(ids, k):
        key = (-sum(scores[i] for i in combo), tuple(sorted(combo)))
        if best is None or key < best:
            best = key
    assert best is not None
    return set(best[1])


# -- planner oracle -----------------------------------------------------------


def chain_rounds(
    descriptors: list[ServiceDescriptor],
    input_facts: set[tuple[str, str]],
    goal_facts: list[tuple[str, str]],
    max_depth: int,
) -> int | None:
    """Rounds of all-fire forward chaining until the goal facts are covered."""
    known = set(input_facts)
    remaining = list(descriptors)
    rounds = 0
    while not all(f in known for f in goal_facts):
        if rounds >= max_depth:
            return None
        firing = [d for d in remaining if all(p.fact in known for p in d.inputs)]
        if not firing:
            return None
        rounds += 1
        remaining = [d for d in remaining if d not in firing]
        for d in firing:
            known.update(p.fact for p in d.outputs)
    return rounds


def brute_force_min_layers(
    descriptors: list[ServiceDescriptor],
    goal: GoalSignature,
    max_depth: int,
) -> int | None:
    """Minimum layer count over every service subset that reaches the goal."""
    input_facts = {p.fact for p in goal.inputs}
    goal_facts = [p.fact for p in goal.outputs]
    best: int | None = None
    n = len(descriptors)
    for mask in range(1 << n):
        subset = [descriptors[i] for i in range(n) if mask >> i & 1]
        rounds = chain_rounds(subset, input_facts, goal_facts, max_depth)
        if rounds is not None and (best is None or rounds < best):
            best = rounds
    return best


def model_depth(model: CompositionModel) -> int:
    """Longest dataflow chain measured from the model inputs."""
    incoming: dict[str, list[str]] = {n.node_id: [] for n in model.nodes}
    for edge in model.edges:
        if edge.dst.node in incoming and edge.src.node != MODEL_IN:
            incoming[edge.dst.node].append(edge.src.node)
    depth: dict[str, int] = {}

    def walk(node_id: str) -> int:
        if node_id not in depth:
            depth[node_id] = 1 + max((walk(p) for p in incoming[node_id]), default=0)
        return depth[node_id]

    return max((walk(nid) for nid in incoming), default=0)


# -- random instances ---------------------------------------------------------

_DATATYPES = ("int", "real", "text", "bool")


def random_goal_and_services(
    rng: random.Random,
    max_services: int = 6,
    max_datatypes: int = 4,
    fact_count: int = 6,
) -> tuple[GoalSignature, list[ServiceDescriptor]]:
    """A random planning instance over a small closed fact pool."""
    datatypes = _DATATYPES[: rng.randint(1, max_datatypes)]
    facts = [P(f"p{i}", rng.choice(datatypes)) for i in range(fact_count)]

    services = []
    for i in range(rng.randint(1, max_services)):
        n_inputs = rng.randint(0, 2)
        inputs = rng.sample(facts, n_inputs)
        output_pool = [f for f in facts if f not in inputs]
        outputs = rng.sample(output_pool, rng.randint(1, min(2, len(output_pool))))
        services.append(
            descriptor(
                f"s{i}",
                inputs=inputs,
                outputs=outputs,
                cost=rng.choice([0.0, 0.5, 1.0, 1.5, 2.0, 3.0]),
            )
        )

    goal_inputs = rng.sample(facts, rng.randint(0, 3))
    remaining = [f for f in facts if f not in goal_inputs]
    goal_outputs = rng.sample(remaining, rng.randint(1, min(2, len(remaining))))
    return GoalSignature(inputs=tuple(goal_inputs), outputs=tuple(goal_outputs)), services


def synth_behavior(d: ServiceDescriptor) -> MockBehavior:
    """A type-plausible pure behavior: identity where possible, else a literal."""
    body = {}
    for out in d.outputs:
        same_typed = [p.name for p in d.inputs if p.datatype == out.datatype]
        if same_typed:
            body[out.name] = Expression.parse(same_typed[0])
        elif out.datatype == "real":
            body[out.name] = Expression.parse("1.5")
        else:
            body[out.name] = Expression.parse("1")
    return MockBehavior(endpoint_key=d.id, service_id=d.id, body=body)


def value_for(datatype: str, rng: random.Random):
    if datatype == "int":
        return rng.randint(-5, 50)
    if datatype == "real":
        return round(rng.uniform(-4.0, 9.0), 3)
    if datatype == "bool":
        return rng.choice([True, False])
    return rng.choice(["alpha", "beta"])


# -- random executable models ---------------------------------------------------


def random_linear_model(
    rng: random.Random, n_nodes: int
) -> tuple[CompositionModel, dict[str, MockBehavior], dict[str, tuple[float, dict[str, float]]]]:
    """A layered model of affine nodes plus a coefficient table for oracles.

    Every fact is real-typed. Node i consumes a nonempty subset of earlier
    facts and produces ``v{i}`` as an affine combination recorded in the
    returned table: v_i = const + sum(coeff[name] * value[name]).
    """
    model_input = P("x", "real")
    available: list[TypedParam] = [model_input]
    produced_by: dict[str, str] = {}
    nodes: list[InvocationNode] = []
    edges: list[Edge] = []
    behaviors: dict[str, MockBehavior] = {}
    table: dict[str, tuple[float, dict[str, float]]] = {}

    for i in range(n_nodes):
        n_inputs = rng.randint(1, min(3, len(available)))
        chosen = rng.sample(available, n_inputs)
        out = P(f"v{i}", "real")
        d = descriptor(
            f"svc{i}",
            inputs=chosen,
            outputs=[out],
            cost=rng.choice([0.5, 1.0, 2.0]),
        )
        node_id = f"n{i}"
        nodes.append(
            InvocationNode(
                node_id=node_id, service_id=d.id, endpoint_key=d.id, descriptor=d
            )
        )
        coeffs: dict[str, float] = {}
        terms = []
        for p in chosen:
            c = rng.choice([1.0, 2.0, 0.5])
            coeffs[p.name] = c
            terms.append(f"{p.name} * {c}")
            src = Port(MODEL_IN, p.name) if p.name == "x" else Port(produced_by[p.name], p.name)
            edges.append(Edge(src=src, dst=Port(node_id, p.name)))
        const = float(i + 1)
        body_text = " + ".join(terms) + f" + {const}"
        behaviors[d.id] = MockBehavior(
            endpoint_key=d.id,
            service_id=d.id,
            body={out.name: Expression.parse(body_text)},
        )
        table[out.name] = (const, coeffs)
        produced_by[out.name] = node_id
        available.append(out)

    final = available[-1]
    goal = GoalSignature(inputs=(model_input,), outputs=(final,))
    if final.name == "x":
        edges.append(Edge(src=Port(MODEL_IN, "x"), dst=Port(MODEL_OUT, "x")))
    else:
        edges.append(Edge(src=Port(produced_by[final.name], final.name), dst=Port(MODEL_OUT, final.name)))
    return CompositionModel.build(nodes=nodes, edges=edges, goal=goal), behaviors, table


def oracle_eval(table: dict[str, tuple[float, dict[str, float]]], name: str, x: float) -> float:
    """Direct evaluation of the affine composition, independent of the engine."""
    if name == "x":
        return x
    const, coeffs = table[name]
    return const + sum(c * oracle_eval(table, dep, x) for dep, c in coeffs.items())


def with_forced_duplicates(
    rng: random.Random, model: CompositionModel
) -> CompositionModel:
    """Clone 1-3 nodes (same service, same sources) and split their consumers."""
    nodes = list(model.nodes)
    edges = list(model.edges)
    clonable = [n for n in nodes if n.node_id != MODEL_IN]
    for node in rng.sample(clonable, min(len(clonable), rng.randint(1, 3))):
        clone_id = node.node_id + "d"
        nodes.append(
            InvocationNode(
                node_id=clone_id,
                service_id=node.service_id,
                endpoint_key=node.endpoint_key,
                descriptor=node.descriptor,
            )
        )
        new_edges = []
        consumers = []
        for edge in edges:
            if edge.dst.node == node.node_id:
                new_edges.append(Edge(src=edge.src, dst=Port(clone_id, edge.dst.name)))
            if edge.src.node == node.node_id:
                consumers.append(edge)
        edges.extend(new_edges)
        if consumers:
            moved = rng.sample(consumers, rng.randint(1, len(consumers)))
            for edge in moved:
                edges.remove(edge)
                edges.append(Edge(src=Port(clone_id, edge.src.name), dst=edge.dst))
    return CompositionModel.build(nodes=nodes, edges=edges, goal=model.goal)
