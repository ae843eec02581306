"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the set an operation is defined on."""


class NumericError(ArithmeticError):
    """An iterative or linear-algebra routine failed to converge."""


class ProtocolError(RuntimeError):
    """Feedback arrived in an order the learner's contract forbids."""


class ConfigError(ValueError):
    """An experiment configuration is invalid or inconsistent."""


class FormatError(ValueError):
    """A data file does not match its declared binary format."""


class InvariantViolation(AssertionError):
    """An internal invariant was broken (indicates a bug, not bad input)."""
