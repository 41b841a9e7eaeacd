"""Iteration controller: the level-2 pipeline.

One iteration runs select -> generate tests -> resolve -> plan -> dedup ->
serialize -> bind -> test per feature, replanning around blamed services on
failure, then reruns every previously delivered feature's stored tests as a
regression sweep. Projects alternate iterations with feedback ingestion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from am4sc.backlog import DELIVERED, FAILED, Feedback, FeatureRequest, IterationPlan
from am4sc.errors import (
    EngineError,
    GeneratorGap,
    NoCandidates,
    NoReferenceModel,
    OracleError,
    ScenarioError,
    UnboundEndpoint,
    Unsatisfiable,
)
from am4sc.jsonio import canonical_dumps, take_fields
from am4sc.params import GoalSignature
from am4sc.planner import (
    PlanConstraints,
    WorkflowDocument,
    plan,
    refactor_dedup,
    replan,
    serialize,
)
from am4sc.registry import BindingInfo, Registry, ServiceQuery
from am4sc.runtime import Scenario, TestVerdict, instantiate, run_tests, blame
from am4sc.testgen import ContractTest, generate_tests, match_models

STATE_SCHEMA_VERSION = "am4sc-state/1"
REPORT_SCHEMA_VERSION = "am4sc-report/1"


@dataclass(frozen=True)
class EngineConfig:
    """Run-wide knobs. One seed drives every feature's test suite."""

    capacity: int = 3
    tests_per_feature: int = 5
    seed: int = 0
    max_refactor_attempts: int = 5
    max_depth: int = 8
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.tests_per_feature < 0:
            raise ValueError(f"tests_per_feature must be >= 0, got {self.tests_per_feature}")
        if self.max_refactor_attempts < 0:
            raise ValueError(
                f"max_refactor_attempts must be >= 0, got {self.max_refactor_attempts}"
            )
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")

    def to_json_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "tests_per_feature": self.tests_per_feature,
            "seed": self.seed,
            "max_refactor_attempts": self.max_refactor_attempts,
            "max_depth": self.max_depth,
            "tolerance": self.tolerance,
        }


@dataclass
class DeliveredArtifact:
    """What delivery stores for regression and integration checks."""

    feature_id: str
    iteration: int
    tests: list[ContractTest]
    workflow: WorkflowDocument

    def to_json_dict(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "iteration": self.iteration,
            "tests": [t.to_json_dict() for t in self.tests],
            "workflow": self.workflow.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: object) -> "DeliveredArtifact":
        data = take_fields(
            obj, ("feature_id", "iteration", "tests", "workflow"), where="delivered artifact"
        )
        return cls(
            feature_id=data["feature_id"],
            iteration=data["iteration"],
            tests=[ContractTest.from_json_dict(t) for t in data["tests"]],
            workflow=WorkflowDocument.from_json_dict(data["workflow"]),
        )


@dataclass
class FeatureRecord:
    """Per-feature outcome within one iteration."""

    feature_id: str
    status: str
    attempts: int
    replans: int = 0
    failure_reason: str | None = None
    blamed: tuple[str, ...] = ()
    verdicts: list[TestVerdict] = field(default_factory=list)
    workflow: WorkflowDocument | None = None

    def to_json_dict(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "status": self.status,
            "attempts": self.attempts,
            "replans": self.replans,
            "failure_reason": self.failure_reason,
            "blamed": list(self.blamed),
            "verdicts": [v.to_json_dict() for v in self.verdicts],
            "workflow": None if self.workflow is None else self.workflow.to_json_dict(),
        }


@dataclass
class IterationReport:
    iteration: int
    plan: IterationPlan
    records: list[FeatureRecord]
    regression: list[tuple[str, bool]]

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "plan": self.plan.to_json_dict(),
            "records": [r.to_json_dict() for r in self.records],
            "regression": [
                {"feature_id": fid, "passing": passing} for fid, passing in self.regression
            ],
        }


@dataclass
class EngineState:
    """Everything the controller owns across iterations."""

    scenario: Scenario
    delivered: dict[str, DeliveredArtifact] = field(default_factory=dict)
    next_iteration: int = 1

    def state_json_dict(self) -> dict:
        return {
            "schema_version": STATE_SCHEMA_VERSION,
            "delivered": [
                self.delivered[fid].to_json_dict() for fid in sorted(self.delivered)
            ],
        }

    def save_state(self, path: str | Path) -> None:
        Path(path).write_text(canonical_dumps(self.state_json_dict()) + "\n", encoding="utf-8")

    def load_state(self, path: str | Path) -> None:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            data = take_fields(payload, ("schema_version", "delivered"), where="state file")
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"cannot read state {path}: {exc}") from exc
        if data["schema_version"] != STATE_SCHEMA_VERSION:
            raise ScenarioError(f"unknown state schema {data['schema_version']!r}")
        try:
            artifacts = [DeliveredArtifact.from_json_dict(a) for a in data["delivered"]]
        except (ValueError, EngineError) as exc:
            raise ScenarioError(f"bad state file {path}: {exc}") from exc
        self.delivered = {a.feature_id: a for a in artifacts}


def gather_candidates(registry: Registry, goal: GoalSignature) -> list[BindingInfo]:
    """Resolve the goal's producers transitively through the broker.

    The broker answers one fact set at a time, so the modeler keeps asking
    for whatever the found services themselves consume until the frontier
    closes. NoCandidates propagates only for the goal outputs themselves.
    """
    available = {p.fact for p in goal.inputs}
    frontier = [p for p in goal.outputs if p.fact not in available]
    if not frontier:
        return []
    requested: set = set()
    found: dict[str, BindingInfo] = {}
    first = True
    while frontier:
        requested.update(p.fact for p in frontier)
        query = ServiceQuery(
            required_outputs=tuple(frontier), available_inputs=goal.inputs, tag_filter=None
        )
        try:
            bindings = registry.resolve(query)
        except NoCandidates:
            if first:
                raise
            break
        first = False
        next_frontier = []
        for binding in bindings:
            if binding.service_id in found:
                continue
            found[binding.service_id] = binding
            for p in binding.descriptor.inputs:
                if p.fact not in available and p.fact not in requested:
                    requested.add(p.fact)
                    next_frontier.append(p)
        frontier = next_frontier
    return sorted(found.values(), key=lambda b: (b.descriptor.cost, b.service_id))


def _process_feature(
    state: EngineState, config: EngineConfig, feature: FeatureRequest
) -> FeatureRecord:
    scenario = state.scenario

    try:
        models = match_models(feature, scenario.reference_models)
        tests = generate_tests(
            feature,
            models[0],
            n=config.tests_per_feature,
            seed=config.seed,
            tolerance=config.tolerance,
        )
    except (NoReferenceModel, GeneratorGap, OracleError) as exc:
        feature.transition_to(FAILED)
        return FeatureRecord(
            feature_id=feature.id, status=FAILED, attempts=0, failure_reason=str(exc)
        )

    goal = feature.goal
    try:
        candidates = gather_candidates(scenario.registry, goal)
    except NoCandidates as exc:
        feature.transition_to(FAILED)
        return FeatureRecord(
            feature_id=feature.id, status=FAILED, attempts=0, failure_reason=str(exc)
        )

    constraints = PlanConstraints(max_depth=config.max_depth)
    try:
        model = plan(goal, candidates, constraints)
    except Unsatisfiable as exc:
        feature.transition_to(FAILED)
        return FeatureRecord(
            feature_id=feature.id, status=FAILED, attempts=0, failure_reason=str(exc)
        )

    attempts = 0
    replans = 0
    excluded: set[str] = set()
    verdicts: list[TestVerdict] = []
    max_runs = 1 + config.max_refactor_attempts

    while True:
        model = refactor_dedup(model)
        doc = serialize(model)
        try:
            composite = instantiate(doc, scenario.behaviors)
        except UnboundEndpoint as exc:
            # The planned service has no executable stand-in; treat it like a
            # blamed service and route around it without consuming a test run.
            broken = {
                n.service_id for n in model.nodes if n.endpoint_key == exc.endpoint_key
            }
            if not broken:
                feature.transition_to(FAILED)
                return FeatureRecord(
                    feature_id=feature.id,
                    status=FAILED,
                    attempts=attempts,
                    replans=replans,
                    failure_reason=str(exc),
                    blamed=tuple(sorted(excluded)),
                )
            excluded |= broken
            replans += 1
            try:
                model = replan(goal, candidates, model, broken, constraints)
            except Unsatisfiable as unsat:
                feature.transition_to(FAILED)
                return FeatureRecord(
                    feature_id=feature.id,
                    status=FAILED,
                    attempts=attempts,
                    replans=replans,
                    failure_reason=str(unsat),
                    blamed=tuple(sorted(excluded)),
                )
            constraints = replace(
                constraints, excluded_services=frozenset(excluded)
            )
            continue

        verdicts = run_tests(composite, tests)
        attempts += 1

        if all(v.passed for v in verdicts):
            feature.transition_to(DELIVERED)
            state.delivered[feature.id] = DeliveredArtifact(
                feature_id=feature.id,
                iteration=state.next_iteration,
                tests=list(tests),
                workflow=doc,
            )
            return FeatureRecord(
                feature_id=feature.id,
                status=DELIVERED,
                attempts=attempts,
                replans=replans,
                blamed=tuple(sorted(excluded)),
                verdicts=verdicts,
                workflow=doc,
            )

        if attempts >= max_runs:
            feature.transition_to(FAILED)
            return FeatureRecord(
                feature_id=feature.id,
                status=FAILED,
                attempts=attempts,
                replans=replans,
                failure_reason=f"tests still failing after {attempts} attempts",
                blamed=tuple(sorted(excluded)),
                verdicts=verdicts,
            )

        blamed_now = blame(verdicts, model)
        if not blamed_now:
            feature.transition_to(FAILED)
            return FeatureRecord(
                feature_id=feature.id,
                status=FAILED,
                attempts=attempts,
                replans=replans,
                failure_reason="tests failed with no service to blame",
                blamed=tuple(sorted(excluded)),
                verdicts=verdicts,
            )
        excluded |= blamed_now
        replans += 1
        try:
            model = replan(goal, candidates, model, blamed_now, constraints)
        except Unsatisfiable as exc:
            feature.transition_to(FAILED)
            return FeatureRecord(
                feature_id=feature.id,
                status=FAILED,
                attempts=attempts,
                replans=replans,
                failure_reason=str(exc),
                blamed=tuple(sorted(excluded)),
                verdicts=verdicts,
            )
        constraints = replace(constraints, excluded_services=frozenset(excluded))


def run_iteration(state: EngineState, config: EngineConfig) -> IterationReport:
    """Run one sprint: selection, per-feature pipelines, regression sweep."""
    scenario = state.scenario
    iteration = state.next_iteration
    iteration_plan = scenario.backlog.select(config.capacity, scenario.policy, iteration)

    records = [
        _process_feature(state, config, scenario.backlog.get(fid))
        for fid in iteration_plan.selected
    ]

    regression = integration_check(state)
    state.next_iteration = iteration + 1
    return IterationReport(
        iteration=iteration, plan=iteration_plan, records=records, regression=regression
    )


def integration_check(state: EngineState) -> list[tuple[str, bool]]:
    """Rerun every delivered feature's stored tests on current behaviors."""
    results: list[tuple[str, bool]] = []
    for fid in sorted(state.delivered):
        artifact = state.delivered[fid]
        try:
            composite = instantiate(artifact.workflow, state.scenario.behaviors)
            verdicts = run_tests(composite, artifact.tests)
            results.append((fid, all(v.passed for v in verdicts)))
        except EngineError:
            results.append((fid, False))
    return results


FeedbackSource = Callable[[int], Iterable[Feedback]]


def run_project(
    state: EngineState,
    config: EngineConfig,
    iterations: int,
    feedback_source: FeedbackSource | None = None,
) -> list[IterationReport]:
    """Alternate iterations with feedback until done or the backlog empties."""
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    reports: list[IterationReport] = []
    for index in range(1, iterations + 1):
        if not state.scenario.backlog.pending():
            break
        reports.append(run_iteration(state, config))
        if feedback_source is not None and index < iterations:
            feedbacks = list(feedback_source(index))
            if feedbacks:
                state.scenario.backlog.ingest_feedback(feedbacks)
    return reports


def consume_once_feedback(feedbacks: list[Feedback]) -> FeedbackSource:
    """File-style feedback: the whole batch lands after the first iteration."""

    def source(after_iteration: int) -> list[Feedback]:
        return feedbacks if after_iteration == 1 else []

    return source


def load_feedback_file(path: str | Path) -> list[Feedback]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read feedback {path}: {exc}") from exc
    if not isinstance(payload, list):
        raise ScenarioError(f"feedback file {path} must hold a JSON array")
    try:
        return [Feedback.from_json_dict(item) for item in payload]
    except (ValueError, EngineError) as exc:
        raise ScenarioError(f"bad feedback entry in {path}: {exc}") from exc


def project_report_json(config: EngineConfig, reports: list[IterationReport]) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config.to_json_dict(),
        "iterations": [r.to_json_dict() for r in reports],
    }
