"""Exception types shared across the library.

Every failure mode a caller can act on gets its own class; plain
``ValueError`` is reserved for programming errors (bad shapes, bad enums).
"""


class DualDomainError(ValueError):
    """Correlation argument outside [-1, 1] beyond floating-point drift."""


class ContractError(ValueError):
    """An operation was invoked outside its documented domain of validity
    (e.g. a zero-bias fast path called with a positive bias variance)."""


class InvalidStateError(ValueError):
    """A kernel recursion reached a state where the correlation is
    undefined (zero variance on the diagonal)."""


class KernelOverflowError(OverflowError):
    """A depth iteration left the range of 64-bit floats.

    Raised instead of silently propagating inf; the message names the layer
    at which the overflow occurred and the bounded alternative
    (correlation / normalized-tangent recursions).
    """


class DatasetFormatError(ValueError):
    """A dataset file failed structural validation (magic bytes, truncation,
    image/label count mismatch)."""


class NumericError(RuntimeError):
    """A dense linear-algebra step failed (non-positive-definite matrix
    after the jitter ladder, eigensolver breakdown)."""
