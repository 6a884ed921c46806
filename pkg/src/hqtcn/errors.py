"""Exception hierarchy shared across the package."""


class HqtcnError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(HqtcnError, ValueError):
    """Invalid configuration value (qubit counts, hyperparameters, config keys)."""


class DataError(HqtcnError, ValueError):
    """Malformed, short, or otherwise unusable input data."""


class MetricError(HqtcnError, ValueError):
    """A metric is undefined for the given inputs."""


class TrainingError(HqtcnError, RuntimeError):
    """Training diverged or could not complete."""
