"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class InvalidMaskError(InvalidInputError):
    """Raised when a band mask admits no complete path through the lattice."""


class PathCountError(InvalidInputError):
    """Raised when explicit path enumeration would exceed the size guard."""


class DegenerateInputError(InvalidInputError):
    """Raised when every candidate carries zero probability mass."""


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


class UnsupportedOperationError(RuntimeError):
    """Raised for operations an object deliberately does not support."""
