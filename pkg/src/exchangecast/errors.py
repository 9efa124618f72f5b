"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments outside its preconditions."""


class DegenerateInputError(ArithmeticError):
    """Input has (near) zero norm where a direction is required."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent."""


class UnknownPlatformError(KeyError):
    """A platform id that was never registered."""

    def __init__(self, platform, known):
        self.platform = platform
        self.known = list(known)
        super().__init__(f"unknown platform {platform!r}; known platforms: {', '.join(map(str, self.known))}")

    def __str__(self):
        return self.args[0]


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending 1-based line number."""

    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {reason}")


class SimulationError(RuntimeError):
    """The simulator produced a non-finite intermediate value."""


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""
