"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, unknown tags, or malformed config/layout input."""


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition (e.g. stepping a finished episode)."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in an activation or gradient."""


class TrainingAborted(RuntimeError):
    """A worker raised; training stopped after flushing the logs written so far."""
