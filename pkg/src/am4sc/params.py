"""Typed parameters and goal signatures.

A parameter is a (name, datatype) pair; datatypes come from a closed tag set.
Matching everywhere in the engine is nominal: two parameters match iff both
name and datatype are equal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from am4sc.jsonio import take_fields

DATATYPE_TAGS = ("int", "real", "text", "bool")

_DATATYPE_RE = re.compile(r"^(?:int|real|text|bool|record\([A-Za-z_][A-Za-z0-9_]*\))$")
# Parameter names double as expression identifiers, so no '-' or '.' allowed.
_PARAM_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
# General identifiers (services, features, models, nodes) additionally allow
# '-' but never '.' or '$', which are reserved by the workflow edge encoding.
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


def validate_identifier(value: object, *, what: str = "identifier") -> str:
    if not isinstance(value, str) or not _IDENT_RE.match(value):
        raise ValueError(f"invalid {what}: {value!r}")
    return value


def validate_param_name(value: object) -> str:
    if not isinstance(value, str) or not _PARAM_NAME_RE.match(value):
        raise ValueError(f"invalid parameter name: {value!r}")
    return value


def validate_datatype(value: object) -> str:
    if not isinstance(value, str) or not _DATATYPE_RE.match(value):
        raise ValueError(f"invalid datatype tag: {value!r}")
    return value


@dataclass(frozen=True)
class TypedParam:
    """A named, typed value slot in a service or feature signature."""

    name: str
    datatype: str

    def __post_init__(self):
        validate_param_name(self.name)
        validate_datatype(self.datatype)

    @property
    def fact(self) -> tuple[str, str]:
        """The (name, datatype) pair used for nominal matching."""
        return (self.name, self.datatype)

    def to_json_dict(self) -> dict:
        return {"name": self.name, "datatype": self.datatype}

    @classmethod
    def from_json_dict(cls, obj: object, *, where: str = "parameter") -> "TypedParam":
        data = take_fields(obj, ("name", "datatype"), where=where)
        return cls(name=data["name"], datatype=data["datatype"])


def unique_params(params: Iterable[TypedParam], *, side: str) -> tuple[TypedParam, ...]:
    """Freeze a parameter list, rejecting duplicate names."""
    out = tuple(params)
    names = [p.name for p in out]
    if len(names) != len(set(names)):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate {side} parameter names: {dupes}")
    return out


@dataclass(frozen=True)
class GoalSignature:
    """What a composition must accept and produce."""

    inputs: tuple[TypedParam, ...]
    outputs: tuple[TypedParam, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", unique_params(self.inputs, side="input"))
        object.__setattr__(self, "outputs", unique_params(self.outputs, side="output"))
        if not self.outputs:
            raise ValueError("goal signature needs at least one output")

    def to_json_dict(self) -> dict:
        return {
            "inputs": [p.to_json_dict() for p in self.inputs],
            "outputs": [p.to_json_dict() for p in self.outputs],
        }

    @classmethod
    def from_json_dict(cls, obj: object, *, where: str = "goal") -> "GoalSignature":
        data = take_fields(obj, ("inputs", "outputs"), where=where)
        return cls(
            inputs=tuple(TypedParam.from_json_dict(p, where=f"{where}.inputs") for p in data["inputs"]),
            outputs=tuple(TypedParam.from_json_dict(p, where=f"{where}.outputs") for p in data["outputs"]),
        )
