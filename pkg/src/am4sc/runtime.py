"""Simulated service ecosystem: binding, execution, testing, blame.

Mock behaviors are pure expressions over the same language as reference
oracles, optionally wrapped with an injected fault. Execution walks a
workflow's nodes in deterministic topological order, feeding each node from
its dataflow edges; since behaviors are pure, any valid order produces the
same bindings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from am4sc.backlog import Backlog, PolicyWeights
from am4sc.errors import (
    EngineError,
    ExecutionFault,
    MissingInput,
    ScenarioError,
    UnboundEndpoint,
)
from am4sc.expr import Expression, ExpressionError, Value
from am4sc.jsonio import take_fields
from am4sc.planner import (
    MODEL_IN,
    MODEL_OUT,
    CompositionModel,
    WorkflowDocument,
    deserialize,
)
from am4sc.registry import Registry, ServiceDescriptor
from am4sc.testgen import ContractTest, ReferenceModel

FAULT_WRONG_VALUE = "wrong_value"
FAULT_ERROR = "error"


@dataclass(frozen=True)
class FaultSpec:
    """Deterministic fault wired into a behavior by the scenario file."""

    mode: str
    applies: str = "always"
    outputs: frozenset[str] | None = None

    def __post_init__(self):
        if self.mode not in (FAULT_WRONG_VALUE, FAULT_ERROR):
            raise ValueError(f"unknown fault mode {self.mode!r}")
        if self.applies != "always":
            raise ValueError(f"unsupported fault applicability {self.applies!r}")
        if self.outputs is not None:
            object.__setattr__(self, "outputs", frozenset(self.outputs))

    @classmethod
    def from_json_dict(cls, obj: object) -> "FaultSpec":
        data = take_fields(obj, ("mode",), optional=("applies", "outputs"), where="fault")
        outputs = data.get("outputs")
        return cls(
            mode=data["mode"],
            applies=data.get("applies", "always"),
            outputs=None if outputs is None else frozenset(outputs),
        )

    def to_json_dict(self) -> dict:
        out: dict = {"mode": self.mode, "applies": self.applies}
        if self.outputs is not None:
            out["outputs"] = sorted(self.outputs)
        return out


@dataclass(frozen=True)
class MockBehavior:
    """Executable stand-in for one real service."""

    endpoint_key: str
    service_id: str
    body: dict[str, Expression]
    fault: FaultSpec | None = None

    def validate_against(self, descriptor: ServiceDescriptor) -> None:
        declared_outputs = {p.name for p in descriptor.outputs}
        if set(self.body) != declared_outputs:
            raise ValueError(
                f"behavior {self.endpoint_key!r} computes {sorted(self.body)} but "
                f"service {descriptor.id!r} declares outputs {sorted(declared_outputs)}"
            )
        declared_inputs = {p.name for p in descriptor.inputs}
        for name, expression in self.body.items():
            free = expression.names() - declared_inputs
            if free:
                raise ValueError(
                    f"behavior {self.endpoint_key!r} output {name!r} references "
                    f"undeclared inputs: {sorted(free)}"
                )
        if self.fault is not None and self.fault.outputs is not None:
            rogue = self.fault.outputs - declared_outputs
            if rogue:
                raise ValueError(
                    f"behavior {self.endpoint_key!r} fault targets unknown outputs: {sorted(rogue)}"
                )

    @classmethod
    def from_json_dict(cls, obj: object) -> "MockBehavior":
        data = take_fields(
            obj, ("endpoint_key", "service_id", "body"), optional=("fault",), where="behavior"
        )
        body = {name: Expression.parse(text) for name, text in data["body"].items()}
        fault = data.get("fault")
        return cls(
            endpoint_key=data["endpoint_key"],
            service_id=data["service_id"],
            body=body,
            fault=None if fault is None else FaultSpec.from_json_dict(fault),
        )

    def to_json_dict(self) -> dict:
        return {
            "endpoint_key": self.endpoint_key,
            "service_id": self.service_id,
            "body": {name: expression.text for name, expression in sorted(self.body.items())},
            "fault": None if self.fault is None else self.fault.to_json_dict(),
        }


@dataclass(frozen=True)
class ExecutableComposite:
    """A workflow bound to concrete behaviors, ready to run."""

    model: CompositionModel
    topo_order: tuple[str, ...]
    bound: dict[str, MockBehavior]


@dataclass(frozen=True)
class FaultRecord:
    node_id: str
    cause: str

    def to_json_dict(self) -> dict:
        return {"node_id": self.node_id, "cause": self.cause}


@dataclass(frozen=True)
class TestVerdict:
    """Outcome of one contract test against a composite."""

    test_id: str
    passed: bool
    actual: Union[dict, FaultRecord]
    mismatched_outputs: frozenset[str] = frozenset()

    def to_json_dict(self) -> dict:
        if isinstance(self.actual, FaultRecord):
            actual: dict = {"fault": self.actual.to_json_dict()}
        else:
            actual = {"outputs": dict(sorted(self.actual.items()))}
        return {
            "test_id": self.test_id,
            "passed": self.passed,
            "actual": actual,
            "mismatched_outputs": sorted(self.mismatched_outputs),
        }


@dataclass
class Scenario:
    """Everything a project run needs, loaded from one JSON file."""

    registry: Registry
    behaviors: dict[str, MockBehavior]
    reference_models: list[ReferenceModel] = field(default_factory=list)
    backlog: Backlog = field(default_factory=Backlog)
    policy: PolicyWeights = field(default_factory=PolicyWeights)


def load_scenario(path: str | Path) -> Scenario:
    """Parse and cross-validate a scenario file."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc

    try:
        data = take_fields(
            payload,
            (),
            optional=("services", "behaviors", "reference_models", "backlog", "policy"),
            where="scenario",
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    registry = Registry()
    for entry in data.get("services", []):
        try:
            registry.register(ServiceDescriptor.from_json_dict(entry))
        except EngineError as exc:
            raise ScenarioError(f"bad service entry: {exc}") from exc

    behaviors: dict[str, MockBehavior] = {}
    for entry in data.get("behaviors", []):
        try:
            behavior = MockBehavior.from_json_dict(entry)
        except (ValueError, ExpressionError) as exc:
            raise ScenarioError(f"bad behavior entry: {exc}") from exc
        descriptor = registry.get(behavior.service_id)
        if descriptor is None:
            raise ScenarioError(
                f"behavior {behavior.endpoint_key!r} references unregistered service "
                f"{behavior.service_id!r}"
            )
        try:
            behavior.validate_against(descriptor)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        if behavior.endpoint_key in behaviors:
            raise ScenarioError(f"duplicate endpoint key {behavior.endpoint_key!r}")
        behaviors[behavior.endpoint_key] = behavior
        registry.set_endpoint(behavior.service_id, behavior.endpoint_key)

    reference_models: list[ReferenceModel] = []
    for entry in data.get("reference_models", []):
        try:
            reference_models.append(ReferenceModel.from_json_dict(entry))
        except (ValueError, ExpressionError) as exc:
            raise ScenarioError(f"bad reference model entry: {exc}") from exc

    try:
        backlog = Backlog.from_json_list(data.get("backlog", []))
    except (ValueError, EngineError) as exc:
        raise ScenarioError(f"bad backlog entry: {exc}") from exc
    for feature in backlog:
        if not feature.tags:
            raise ScenarioError(f"feature {feature.id!r} has no tags; it can never be matched")

    policy = PolicyWeights()
    if "policy" in data:
        try:
            policy = PolicyWeights.from_json_dict(data["policy"])
        except ValueError as exc:
            raise ScenarioError(f"bad policy: {exc}") from exc

    return Scenario(
        registry=registry,
        behaviors=behaviors,
        reference_models=reference_models,
        backlog=backlog,
        policy=policy,
    )


def instantiate(
    doc: WorkflowDocument | dict, behaviors: dict[str, MockBehavior]
) -> ExecutableComposite:
    """Bind a workflow document's nodes to behaviors."""
    model = deserialize(doc)
    bound: dict[str, MockBehavior] = {}
    for node in model.nodes:
        behavior = behaviors.get(node.endpoint_key)
        if behavior is None:
            raise UnboundEndpoint(node.endpoint_key)
        bound[node.node_id] = behavior
    return ExecutableComposite(
        model=model, topo_order=tuple(model.topological_order()), bound=bound
    )


def _perturb(value: Value) -> Value:
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if isinstance(value, float):
        return value + 1.0
    if isinstance(value, str):
        return value + "*"
    return "wrong-value"


def execute(composite: ExecutableComposite, inputs: dict[str, Value]) -> dict[str, Value]:
    """Evaluate the composite on one input binding."""
    goal = composite.model.goal
    absent = [p.name for p in goal.inputs if p.name not in inputs]
    if absent:
        raise MissingInput(f"missing goal inputs: {absent}")

    produced: dict[tuple[str, str], Value] = {
        (MODEL_IN, p.name): inputs[p.name] for p in goal.inputs
    }
    incoming = composite.model.incoming()

    for node_id in composite.topo_order:
        binding: dict[str, Value] = {}
        for edge in incoming.get(node_id, []):
            key = (edge.src.node, edge.src.name)
            if key not in produced:
                raise ExecutionFault(node_id, f"no upstream value for {edge.src.encode()}")
            binding[edge.dst.name] = produced[key]
        behavior = composite.bound[node_id]
        if behavior.fault is not None and behavior.fault.mode == FAULT_ERROR:
            raise ExecutionFault(node_id, "injected fault")
        outputs: dict[str, Value] = {}
        for name in sorted(behavior.body):
            try:
                outputs[name] = behavior.body[name].evaluate(binding)
            except ExpressionError as exc:
                raise ExecutionFault(node_id, str(exc)) from exc
        if behavior.fault is not None and behavior.fault.mode == FAULT_WRONG_VALUE:
            targets = behavior.fault.outputs if behavior.fault.outputs is not None else set(outputs)
            for name in targets:
                if name in outputs:
                    outputs[name] = _perturb(outputs[name])
        for name, value in outputs.items():
            produced[(node_id, name)] = value

    result: dict[str, Value] = {}
    for edge in incoming.get(MODEL_OUT, []):
        key = (edge.src.node, edge.src.name)
        if key not in produced:
            raise ExecutionFault(MODEL_OUT, f"no upstream value for {edge.src.encode()}")
        result[edge.dst.name] = produced[key]
    return result


def _values_match(actual: Value, expected: Value, *, real_typed: bool, tolerance: float) -> bool:
    if real_typed:
        if isinstance(actual, bool) or not isinstance(actual, (int, float)):
            return False
        if isinstance(expected, bool) or not isinstance(expected, (int, float)):
            return False
        return abs(actual - expected) <= tolerance
    return actual == expected


def run_tests(
    composite: ExecutableComposite, tests: Iterable[ContractTest]
) -> list[TestVerdict]:
    """Execute each contract test; failures become verdicts, not errors."""
    real_typed = {p.name for p in composite.model.goal.outputs if p.datatype == "real"}
    verdicts: list[TestVerdict] = []
    for test in tests:
        try:
            actual = execute(composite, test.inputs)
        except ExecutionFault as exc:
            verdicts.append(
                TestVerdict(
                    test_id=test.id,
                    passed=False,
                    actual=FaultRecord(node_id=exc.node_id, cause=exc.cause),
                    mismatched_outputs=frozenset(),
                )
            )
            continue
        mismatched = {
            name
            for name, expected in test.expected.items()
            if not _values_match(
                actual.get(name),
                expected,
                real_typed=name in real_typed,
                tolerance=test.tolerance,
            )
        }
        verdicts.append(
            TestVerdict(
                test_id=test.id,
                passed=not mismatched,
                actual=actual,
                mismatched_outputs=frozenset(mismatched),
            )
        )
    return verdicts


def blame(verdicts: Iterable[TestVerdict], model: CompositionModel) -> set[str]:
    """Service ids on any dataflow path into a mismatched or faulted output.

    Empty models yield the empty set (the requirement itself is at fault).
    A failure no node can explain blames every service so the refactor loop
    fails fast instead of spinning.
    """
    verdicts = list(verdicts)
    failed = [v for v in verdicts if not v.passed]
    if not failed:
        raise ValueError("blame needs at least one failed verdict")

    parents: dict[str, set[str]] = {n.node_id: set() for n in model.nodes}
    output_source: dict[str, str] = {}
    for edge in model.edges:
        if edge.dst.node == MODEL_OUT:
            if edge.src.node != MODEL_IN:
                output_source[edge.dst.name] = edge.src.node
        elif edge.src.node != MODEL_IN:
            parents[edge.dst.node].add(edge.src.node)

    targets: set[str] = set()
    for verdict in failed:
        if isinstance(verdict.actual, FaultRecord):
            if verdict.actual.node_id in parents:
                targets.add(verdict.actual.node_id)
        for name in verdict.mismatched_outputs:
            if name in output_source:
                targets.add(output_source[name])

    reached: set[str] = set()
    stack = list(targets)
    while stack:
        node_id = stack.pop()
        if node_id in reached:
            continue
        reached.add(node_id)
        stack.extend(parents.get(node_id, ()))

    node_map = model.node_map()
    services = {node_map[node_id].service_id for node_id in reached}
    if not services and model.nodes:
        services = {n.service_id for n in model.nodes}
    return services
