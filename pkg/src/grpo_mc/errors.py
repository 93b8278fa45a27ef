"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or argument combination."""


class InvalidTokenError(ValueError):
    """A token id outside the vocabulary."""


class NumericalError(FloatingPointError):
    """Non-finite value produced during a computation."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class ManifestError(ValueError):
    """One or more manifest records failed validation."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems)
        super().__init__(f"{len(self.problems)} bad manifest record(s): {lines}")
