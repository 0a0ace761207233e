"""Exception hierarchy for the simulator.

All errors subclass ValueError as well, so callers that only catch
ValueError keep working.
"""


class CflhkdError(Exception):
    """Base class for simulator errors."""


class DimensionError(CflhkdError, ValueError):
    """Vector, histogram or model layout lengths do not match."""


class DegenerateVectorError(CflhkdError, ValueError):
    """A vector with zero norm was given where a direction is needed."""


class DegenerateWeightsError(CflhkdError, ValueError):
    """Aggregation weights cannot be normalized (all numerators zero)."""


class EmptyDataError(CflhkdError, ValueError):
    """An operation that needs at least one example got none."""


class PartitionError(CflhkdError, ValueError):
    """The pool cannot satisfy the requested partition."""


class ConfigError(CflhkdError, ValueError):
    """Invalid configuration value or schema."""


class UnknownDriftKindError(CflhkdError, ValueError):
    """Drift event kind is not one of the supported kinds."""


class SerializationError(CflhkdError, ValueError):
    """Binary model or dataset payload is malformed."""
