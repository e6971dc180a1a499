"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary or JSON input file does not conform to its declared format."""


class ValidationError(ValueError):
    """A structurally valid input violates a semantic invariant (bad index, mixed
    candidate types, missing referenced file, ...)."""


class DegenerateVectorError(ValueError):
    """Cosine similarity was requested for a zero-norm vector."""


class InstanceTooSmallError(ValueError):
    """The patch grid has fewer patches than the matcher needs (N < k)."""


class FrozenParameterError(RuntimeError):
    """A parameter update was attempted on a frozen projector."""


class InvariantError(RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
