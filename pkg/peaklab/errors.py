"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PeakLabError(Exception):
    exit_code = 1


class ConfigError(PeakLabError):
    exit_code = 1


class SchemaError(ConfigError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DependencyError(ConfigError):
    """An upstream artifact is missing; the message names the command to run."""

    def __init__(self, artifact, command):
        super().__init__(
            f"Required artifact {artifact} not found. Run `peaklab {command}` first."
        )
        self.artifact = artifact
        self.command = command


class DataQualityError(PeakLabError):
    exit_code = 2


class MalformedLineError(DataQualityError):
    pass


class NumericalError(PeakLabError):
    exit_code = 3


class UndefinedRatioError(NumericalError):
    pass


class DegenerateModelError(NumericalError):
    pass


class ParameterError(ConfigError, ValueError):
    """Invalid argument values (bad model parameters, K > n, too few samples)."""
