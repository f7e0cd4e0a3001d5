"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input, e.g. a zero-norm vector fed to cosine similarity."""


class ConfigurationError(RuntimeError):
    """A run configuration references something that does not exist (raised at load time)."""


class IngestionError(RuntimeError):
    """A dataset root is missing, empty, or malformed."""
