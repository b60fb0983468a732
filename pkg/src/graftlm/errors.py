"""Exception types shared across the package.

Everything that means "the caller violated a documented contract" derives
from ContractError so the CLI can map it to a nonzero exit code in one
place. NumericError is reserved for runtime numeric faults (NaN blowups,
divergence) that are not the caller's fault.
"""


class ContractError(ValueError):
    """A documented precondition or schema was violated."""


class ShapeError(ContractError):
    """Array shapes incompatible with the requested operation."""


class LengthError(ContractError):
    """A sequence exceeds a configured length limit."""


class EmptyNeighborhoodError(ContractError):
    """A softmax group or graph node ended up with no unmasked entry."""


class SchemaError(ContractError):
    """A data file does not match its documented schema."""


class ConfigError(ContractError):
    """An invalid configuration value or unknown configuration key."""


class RetrievalError(ContractError):
    """Retrieval requested against an empty or unusable index."""


class NumericError(RuntimeError):
    """A non-finite value appeared where finite math was required."""
