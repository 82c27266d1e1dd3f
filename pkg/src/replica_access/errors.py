"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid or unknown configuration (exit code 2)."""


class DataContractError(ValueError):
    """Inputs that do not fit together, e.g. mismatched dimensions or sweep axes (exit code 3)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed; ``trace`` keeps whatever was computed (exit code 4)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DivergedError(NumericalError):
    """AMP produced NaN or Inf."""


class NotConvergedError(NumericalError):
    """An iteration hit its budget without meeting the stopping rule."""
