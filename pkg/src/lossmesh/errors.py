"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration (bad field, unknown key, missing file)."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration failed to converge; carries the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IntegrationError(RuntimeError):
    """An ODE trajectory left the valid state space (NaN/Inf)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EstimationError(RuntimeError):
    """Not enough data to form an estimate (e.g. fewer than 2 batches)."""
