"""Exception types shared across the package."""


class RLCMError(Exception):
    """Base class for package errors."""


class ConfigError(RLCMError, ValueError):
    """Invalid model or run configuration."""


class DomainError(RLCMError, ValueError):
    """Arguments outside an operation's domain."""


class DataError(RLCMError, ValueError):
    """Malformed or inconsistent input data."""


class ScenarioError(RLCMError, RuntimeError):
    """Data-generating parameters could not satisfy the acceptance rules."""


class InvariantViolation(RLCMError, RuntimeError):
    """A support invariant failed during sampling."""

    def __init__(self, message: str, block: str = "", iteration: int = -1):
        self.block = block
        self.iteration = iteration
        where = []
        if block:
            where.append(f"block={block}")
        if iteration >= 0:
            where.append(f"iteration={iteration}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
