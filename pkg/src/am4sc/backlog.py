"""Feature backlog and iteration selection.

Features are scored by blending the customer's priority with company policy
tag weights ("meet in the middle"); the top scorers fill the next iteration.
Feedback between iterations accepts deliveries or re-queues rejected work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from am4sc.errors import DuplicateId, EmptyBacklog, InvalidTransition, UnknownFeature
from am4sc.jsonio import take_fields
from am4sc.params import GoalSignature, TypedParam, unique_params, validate_identifier

PENDING = "pending"
SELECTED = "selected"
DELIVERED = "delivered"
FAILED = "failed"

STATUSES = (PENDING, SELECTED, DELIVERED, FAILED)

# pending -> selected -> delivered|failed; feedback re-queues delivered or
# failed features back to pending.
_ALLOWED_TRANSITIONS = {
    (PENDING, SELECTED),
    (SELECTED, DELIVERED),
    (SELECTED, FAILED),
    (FAILED, PENDING),
    (DELIVERED, PENDING),
}


@dataclass
class FeatureRequest:
    """One customer goal waiting in the backlog."""

    id: str
    title: str
    description: str
    customer_priority: int
    tags: frozenset[str]
    goal_inputs: tuple[TypedParam, ...]
    goal_outputs: tuple[TypedParam, ...]
    status: str = PENDING

    def __post_init__(self):
        validate_identifier(self.id, what="feature id")
        if not isinstance(self.customer_priority, int) or isinstance(self.customer_priority, bool):
            raise ValueError(f"customer_priority must be an integer, got {self.customer_priority!r}")
        if not 1 <= self.customer_priority <= 10:
            raise ValueError(f"customer_priority out of [1, 10]: {self.customer_priority}")
        self.tags = frozenset(self.tags)
        self.goal_inputs = unique_params(self.goal_inputs, side="goal input")
        self.goal_outputs = unique_params(self.goal_outputs, side="goal output")
        if not self.goal_outputs:
            raise ValueError(f"feature {self.id!r} needs at least one goal output")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r} for feature {self.id!r}")

    @property
    def goal(self) -> GoalSignature:
        return GoalSignature(inputs=self.goal_inputs, outputs=self.goal_outputs)

    def transition_to(self, new_status: str) -> None:
        if (self.status, new_status) not in _ALLOWED_TRANSITIONS:
            raise InvalidTransition(
                f"feature {self.id!r} cannot move {self.status} -> {new_status}"
            )
        self.status = new_status

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "customer_priority": self.customer_priority,
            "tags": sorted(self.tags),
            "goal_inputs": [p.to_json_dict() for p in self.goal_inputs],
            "goal_outputs": [p.to_json_dict() for p in self.goal_outputs],
            "status": self.status,
        }

    @classmethod
    def from_json_dict(cls, obj: object) -> "FeatureRequest":
        data = take_fields(
            obj,
            ("id", "title", "description", "customer_priority", "tags", "goal_inputs", "goal_outputs"),
            optional=("status",),
            where="feature request",
        )
        return cls(
            id=data["id"],
            title=data["title"],
            description=data["description"],
            customer_priority=data["customer_priority"],
            tags=frozenset(data["tags"]),
            goal_inputs=tuple(
                TypedParam.from_json_dict(p, where="feature.goal_inputs") for p in data["goal_inputs"]
            ),
            goal_outputs=tuple(
                TypedParam.from_json_dict(p, where="feature.goal_outputs") for p in data["goal_outputs"]
            ),
            status=data.get("status", PENDING),
        )


@dataclass(frozen=True)
class PolicyWeights:
    """Company-side scoring knobs: per-tag weights and the blend factor."""

    tag_weights: dict[str, float] = field(default_factory=dict)
    alpha: float = 0.5

    def __post_init__(self):
        for tag, weight in self.tag_weights.items():
            if not isinstance(tag, str) or not tag:
                raise ValueError(f"invalid policy tag {tag!r}")
            if isinstance(weight, bool) or not isinstance(weight, (int, float)) or not 0 <= weight <= 1:
                raise ValueError(f"tag weight for {tag!r} out of [0, 1]: {weight!r}")
        if isinstance(self.alpha, bool) or not isinstance(self.alpha, (int, float)):
            raise ValueError(f"alpha must be a number, got {self.alpha!r}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha out of [0, 1]: {self.alpha}")

    @classmethod
    def from_json_dict(cls, obj: object) -> "PolicyWeights":
        data = take_fields(obj, ("tag_weights", "alpha"), where="policy")
        return cls(tag_weights=dict(data["tag_weights"]), alpha=data["alpha"])

    def to_json_dict(self) -> dict:
        return {"tag_weights": dict(sorted(self.tag_weights.items())), "alpha": self.alpha}


def score(feature: FeatureRequest, policy: PolicyWeights) -> float:
    """Blend of customer priority and policy tag weights, in [0, 1]."""
    policy_score = min(1.0, sum(policy.tag_weights.get(tag, 0.0) for tag in feature.tags))
    return policy.alpha * (feature.customer_priority / 10) + (1 - policy.alpha) * policy_score


def rank_by_score(scored: Iterable[tuple[str, float]]) -> list[str]:
    """Order feature ids by score descending, ties by id ascending."""
    return [fid for fid, _ in sorted(scored, key=lambda pair: (-pair[1], pair[0]))]


@dataclass(frozen=True)
class IterationPlan:
    iteration: int
    selected: tuple[str, ...]
    deferred: tuple[str, ...]
    scores: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "selected": list(self.selected),
            "deferred": list(self.deferred),
            "scores": dict(sorted(self.scores.items())),
        }


@dataclass(frozen=True)
class Feedback:
    """Customer response to one delivered or failed feature."""

    feature_id: str
    accepted: bool
    new_priority: int | None = None
    new_requests: tuple[FeatureRequest, ...] = ()

    def __post_init__(self):
        if self.new_priority is not None and not 1 <= self.new_priority <= 10:
            raise ValueError(f"new_priority out of [1, 10]: {self.new_priority}")

    @classmethod
    def from_json_dict(cls, obj: object) -> "Feedback":
        data = take_fields(
            obj,
            ("feature_id", "accepted"),
            optional=("new_priority", "new_requests"),
            where="feedback",
        )
        return cls(
            feature_id=data["feature_id"],
            accepted=bool(data["accepted"]),
            new_priority=data.get("new_priority"),
            new_requests=tuple(
                FeatureRequest.from_json_dict(r) for r in data.get("new_requests", [])
            ),
        )


@dataclass(frozen=True)
class ProgressSummary:
    pending: int
    selected: int
    delivered: int
    failed: int

    @property
    def total(self) -> int:
        return self.pending + self.selected + self.delivered + self.failed

    @property
    def delivered_ratio(self) -> float:
        return self.delivered / self.total if self.total else 0.0

    def to_json_dict(self) -> dict:
        return {
            "pending": self.pending,
            "selected": self.selected,
            "delivered": self.delivered,
            "failed": self.failed,
            "total": self.total,
            "delivered_ratio": self.delivered_ratio,
        }


class Backlog:
    """Ordered collection of feature requests, keyed by id."""

    def __init__(self, features: Iterable[FeatureRequest] = ()):
        self._features: dict[str, FeatureRequest] = {}
        for feature in features:
            self.add(feature)

    def __len__(self) -> int:
        return len(self._features)

    def __iter__(self):
        return iter(self._features.values())

    def add(self, feature: FeatureRequest) -> None:
        if feature.id in self._features:
            raise DuplicateId(f"feature {feature.id!r} already in backlog")
        self._features[feature.id] = feature

    def get(self, feature_id: str) -> FeatureRequest:
        try:
            return self._features[feature_id]
        except KeyError:
            raise UnknownFeature(f"no feature {feature_id!r} in backlog") from None

    def features(self) -> list[FeatureRequest]:
        return list(self._features.values())

    def pending(self) -> list[FeatureRequest]:
        return [f for f in self._features.values() if f.status == PENDING]

    def select(self, capacity: int, policy: PolicyWeights, iteration: int) -> IterationPlan:
        """Pick the top-capacity pending features and mark them selected."""
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        pending = self.pending()
        if not pending:
            raise EmptyBacklog("no pending features to select from")
        scores = {f.id: score(f, policy) for f in pending}
        ranked = rank_by_score(scores.items())
        selected = tuple(ranked[:capacity])
        deferred = tuple(ranked[capacity:])
        for fid in selected:
            self._features[fid].transition_to(SELECTED)
        return IterationPlan(iteration=iteration, selected=selected, deferred=deferred, scores=scores)

    def ingest_feedback(self, feedbacks: Iterable[Feedback]) -> "Backlog":
        """Apply customer responses; returns self for chaining."""
        for fb in feedbacks:
            feature = self.get(fb.feature_id)
            if feature.status not in (DELIVERED, FAILED):
                raise InvalidTransition(
                    f"feedback on feature {feature.id!r} in status {feature.status!r}"
                )
            if not fb.accepted:
                if fb.new_priority is not None:
                    feature.customer_priority = fb.new_priority
                feature.transition_to(PENDING)
            for request in fb.new_requests:
                fresh = FeatureRequest(
                    id=request.id,
                    title=request.title,
                    description=request.description,
                    customer_priority=request.customer_priority,
                    tags=request.tags,
                    goal_inputs=request.goal_inputs,
                    goal_outputs=request.goal_outputs,
                    status=PENDING,
                )
                self.add(fresh)
        return self

    def progress(self) -> ProgressSummary:
        counts = {status: 0 for status in STATUSES}
        for feature in self._features.values():
            counts[feature.status] += 1
        return ProgressSummary(
            pending=counts[PENDING],
            selected=counts[SELECTED],
            delivered=counts[DELIVERED],
            failed=counts[FAILED],
        )

    def to_json_list(self) -> list[dict]:
        return [f.to_json_dict() for f in self._features.values()]

    @classmethod
    def from_json_list(cls, items: Iterable[object]) -> "Backlog":
        return cls(FeatureRequest.from_json_dict(item) for item in items)
