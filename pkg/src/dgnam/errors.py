"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible; message names the offending axis."""


class InputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ParseError(ValueError):
    """Raised on malformed binary input; message carries a byte offset where known."""


class TrainingError(RuntimeError):
    """Raised when a training run diverges (NaN loss); message names the iteration."""


class SynthesisError(RuntimeError):
    """Raised when an optimization trace hits NaN; message names the iteration."""
