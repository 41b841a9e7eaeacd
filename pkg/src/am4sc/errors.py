"""Exception hierarchy shared by all engine modules."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for every error the engine raises deliberately."""


# -- registry ---------------------------------------------------------------

class InvalidDescriptor(EngineError):
    """A service descriptor violates one of its invariants."""


class DuplicateId(EngineError):
    """An identifier is already taken (same or newer version registered)."""


class NoCandidates(EngineError):
    """No registered service produces any of the requested outputs."""


# -- backlog ----------------------------------------------------------------

class EmptyBacklog(EngineError):
    """Selection was requested but no feature is pending."""


class UnknownFeature(EngineError):
    """A feedback item references a feature id that is not in the backlog."""


class InvalidTransition(EngineError):
    """A feature status change is not allowed by the lifecycle rules."""


# -- testgen ----------------------------------------------------------------

class NoReferenceModel(EngineError):
    """No reference model shares a domain tag with the feature."""


class GeneratorGap(EngineError):
    """A goal input has no generator in the matched reference model."""


class OracleError(EngineError):
    """A reference-model oracle could not produce an expected output."""


# -- planner ----------------------------------------------------------------

class Unsatisfiable(EngineError):
    """The goal outputs cannot be reached within the depth bound.

    Carries the set of goal output names that stayed unreachable.
    """

    def __init__(self, missing: set[str]):
        self.missing = frozenset(missing)
        super().__init__(f"unreachable outputs: {', '.join(sorted(self.missing))}")


class SchemaError(EngineError):
    """A workflow document is malformed or has an unknown schema version."""


# -- runtime ----------------------------------------------------------------

class ScenarioError(EngineError):
    """A scenario file failed to parse or cross-reference validation."""


class UnboundEndpoint(EngineError):
    """A workflow node references an endpoint key with no behavior."""

    def __init__(self, endpoint_key: str):
        self.endpoint_key = endpoint_key
        super().__init__(f"no behavior bound for endpoint key {endpoint_key!r}")


class MissingInput(EngineError):
    """An execution was started without all goal input values."""


class ExecutionFault(EngineError):
    """A node aborted during execution (injected fault or bad expression)."""

    def __init__(self, node_id: str, cause: str):
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"node {node_id!r} faulted: {cause}")
