"""Exception types shared across the package.

Argument-level misuse (bad agent id, malformed state, empty input) raises
plain ValueError at the offending call site; the classes below mark domain
failures that callers may want to catch and map to exit codes.
"""


class DactdError(Exception):
    """Base class for domain errors raised by this package."""


class TopologyError(DactdError):
    """Graph does not satisfy a structural requirement (e.g. connectivity)."""


class ConfigurationError(DactdError):
    """A configuration is invalid or inconsistent with the requested run."""


class TransportError(DactdError):
    """A send was attempted on an edge not present in the schedule."""


class ProtocolCorruptionError(DactdError):
    """Two received values for the same slot disagree; state is corrupt."""


class IncompleteAggregationError(DactdError):
    """A read-out was requested before the delivery guarantee filled the slot."""

    def __init__(self, tick: int, agent: int, missing: list[int]):
        self.tick = tick
        self.agent = agent
        self.missing = missing
        super().__init__(
            f"agent {agent}: aggregation for tick {tick} incomplete, "
            f"missing origins {missing}"
        )


class ModelError(DactdError):
    """An exact-solution routine met a model outside its assumptions."""


class RankError(ModelError):
    """A feature matrix or linear system lacks the rank the solve requires."""


class CapacityError(DactdError):
    """Exhaustive enumeration would exceed the configured state-space cap."""


class NumericError(DactdError):
    """A non-finite value appeared where the algorithm requires finite reals."""
