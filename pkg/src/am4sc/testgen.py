"""Contract-test generation from domain reference models.

A reference model pairs seeded input generators with a pure arithmetic
oracle. Matching a feature to a model is tag-overlap based; generation is
fully deterministic: each drawn value depends only on (seed, test index,
parameter name), so adding a parameter never perturbs the other draws.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

from am4sc.backlog import FeatureRequest
from am4sc.errors import GeneratorGap, NoReferenceModel, OracleError
from am4sc.expr import EvaluationError, Expression, ExpressionError, Value
from am4sc.jsonio import take_fields
from am4sc.params import validate_datatype, validate_identifier, validate_param_name

DEFAULT_TESTS_PER_FEATURE = 5
DEFAULT_TOLERANCE = 1e-9

_TWO_64 = 2**64


def draw_uint(seed: int, test_index: int, param: str) -> int:
    """Stable 64-bit draw keyed by (seed, test index, parameter name)."""
    digest = hashlib.sha256(f"{seed}|{test_index}|{param}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class GeneratorSpec:
    """How to draw one input parameter: a bounded range or a value list."""

    datatype: str
    lo: float | None = None
    hi: float | None = None
    values: tuple[Value, ...] | None = None

    def __post_init__(self):
        validate_datatype(self.datatype)
        has_range = self.lo is not None or self.hi is not None
        if has_range == (self.values is not None):
            raise ValueError("generator needs exactly one of range or values")
        if has_range:
            if self.datatype not in ("int", "real"):
                raise ValueError(f"range generator needs int/real datatype, got {self.datatype!r}")
            if self.lo is None or self.hi is None or self.lo > self.hi:
                raise ValueError(f"bad range [{self.lo!r}, {self.hi!r}]")
            if self.datatype == "int" and not (
                float(self.lo).is_integer() and float(self.hi).is_integer()
            ):
                raise ValueError("int range bounds must be integers")
        elif not self.values:
            raise ValueError("value list must be nonempty")

    def draw(self, seed: int, test_index: int, param: str) -> Value:
        u = draw_uint(seed, test_index, param)
        if self.values is not None:
            return self.values[u % len(self.values)]
        if self.datatype == "int":
            lo, hi = int(self.lo), int(self.hi)
            return lo + u % (hi - lo + 1)
        return self.lo + (u / _TWO_64) * (self.hi - self.lo)

    @property
    def degenerate(self) -> bool:
        """True when every draw yields the same value."""
        if self.values is not None:
            return len(set(self.values)) == 1
        return self.lo == self.hi

    def to_json_dict(self) -> dict:
        if self.values is not None:
            return {"datatype": self.datatype, "values": list(self.values)}
        lo = int(self.lo) if self.datatype == "int" else self.lo
        hi = int(self.hi) if self.datatype == "int" else self.hi
        return {"datatype": self.datatype, "range": [lo, hi]}

    @classmethod
    def from_json_dict(cls, obj: object, *, where: str = "generator") -> "GeneratorSpec":
        data = take_fields(obj, ("datatype",), optional=("range", "values"), where=where)
        if "range" in data:
            bounds = data["range"]
            if not isinstance(bounds, list) or len(bounds) != 2:
                raise ValueError(f"{where}: range must be [lo, hi]")
            return cls(datatype=data["datatype"], lo=bounds[0], hi=bounds[1])
        if "values" in data:
            return cls(datatype=data["datatype"], values=tuple(data["values"]))
        raise ValueError(f"{where}: needs a range or a value list")


@dataclass(frozen=True)
class ReferenceModel:
    """A problem-domain template: input generators plus an output oracle."""

    id: str
    domain_tags: frozenset[str]
    input_generators: dict[str, GeneratorSpec]
    oracle: dict[str, Expression]

    def __post_init__(self):
        validate_identifier(self.id, what="reference model id")
        object.__setattr__(self, "domain_tags", frozenset(self.domain_tags))
        if not self.domain_tags:
            raise ValueError(f"reference model {self.id!r} needs at least one domain tag")
        for name in self.input_generators:
            validate_param_name(name)
        declared = set(self.input_generators)
        for out_name, expression in self.oracle.items():
            validate_param_name(out_name)
            free = expression.names() - declared
            if free:
                raise ValueError(
                    f"oracle for {out_name!r} in model {self.id!r} references "
                    f"undeclared names: {sorted(free)}"
                )

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "domain_tags": sorted(self.domain_tags),
            "input_generators": {
                name: spec.to_json_dict() for name, spec in sorted(self.input_generators.items())
            },
            "oracle": {name: expression.text for name, expression in sorted(self.oracle.items())},
        }

    @classmethod
    def from_json_dict(cls, obj: object) -> "ReferenceModel":
        data = take_fields(obj, ("id", "domain_tags", "input_generators", "oracle"), where="reference model")
        generators = {
            name: GeneratorSpec.from_json_dict(spec, where=f"generator {name!r}")
            for name, spec in data["input_generators"].items()
        }
        oracle = {name: Expression.parse(text) for name, text in data["oracle"].items()}
        return cls(
            id=data["id"],
            domain_tags=frozenset(data["domain_tags"]),
            input_generators=generators,
            oracle=oracle,
        )


@dataclass(frozen=True)
class ContractTest:
    """One requirement artifact: concrete inputs and the expected outputs."""

    id: str
    feature_id: str
    inputs: dict[str, Value]
    expected: dict[str, Value]
    tolerance: float
    origin: str
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "feature_id": self.feature_id,
            "inputs": dict(sorted(self.inputs.items())),
            "expected": dict(sorted(self.expected.items())),
            "tolerance": self.tolerance,
            "origin": self.origin,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, obj: object) -> "ContractTest":
        data = take_fields(
            obj,
            ("id", "feature_id", "inputs", "expected", "tolerance", "origin", "seed"),
            where="contract test",
        )
        return cls(
            id=data["id"],
            feature_id=data["feature_id"],
            inputs=dict(data["inputs"]),
            expected=dict(data["expected"]),
            tolerance=data["tolerance"],
            origin=data["origin"],
            seed=data["seed"],
        )


def match_models(feature: FeatureRequest, models: Iterable[ReferenceModel]) -> list[ReferenceModel]:
    """Models sharing a domain tag, best overlap first, ties by id."""
    hits = [
        (len(model.domain_tags & feature.tags), model)
        for model in models
        if model.domain_tags & feature.tags
    ]
    hits.sort(key=lambda pair: (-pair[0], pair[1].id))
    if not hits:
        raise NoReferenceModel(
            f"no reference model shares a domain tag with feature {feature.id!r}"
        )
    return [model for _, model in hits]


def generate_tests(
    feature: FeatureRequest,
    model: ReferenceModel,
    n: int = DEFAULT_TESTS_PER_FEATURE,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
) -> list[ContractTest]:
    """Draw ``n`` seeded input bindings and evaluate the model oracle."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    gaps = [p.name for p in feature.goal_inputs if p.name not in model.input_generators]
    if gaps:
        raise GeneratorGap(
            f"model {model.id!r} has no generator for goal inputs {gaps} of feature {feature.id!r}"
        )
    tests = []
    for index in range(n):
        inputs = {
            p.name: model.input_generators[p.name].draw(seed, index, p.name)
            for p in feature.goal_inputs
        }
        expected: dict[str, Value] = {}
        for out in feature.goal_outputs:
            expression = model.oracle.get(out.name)
            if expression is None:
                raise OracleError(
                    f"model {model.id!r} has no oracle expression for output {out.name!r}"
                )
            try:
                expected[out.name] = expression.evaluate(inputs)
            except (EvaluationError, ExpressionError) as exc:
                raise OracleError(str(exc)) from exc
        tests.append(
            ContractTest(
                id=f"{feature.id}-t{index}",
                feature_id=feature.id,
                inputs=inputs,
                expected=expected,
                tolerance=tolerance,
                origin=model.id,
                seed=seed,
            )
        )
    return tests
