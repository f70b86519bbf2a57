"""Exception hierarchy shared by every module."""


class LinGNNError(Exception):
    """Base class for all package errors."""


class DimensionError(LinGNNError, ValueError):
    """Matrix shapes do not conform."""


class ConfigurationError(LinGNNError, ValueError):
    """Invalid configuration (init scheme, train config, experiment spec)."""


class UnsupportedArchitectureError(LinGNNError, ValueError):
    """Operation is only defined for a subset of architectures or losses."""


class ComparisonUndefinedError(LinGNNError, ValueError):
    """Two models that must share outputs do not."""


class ReportError(LinGNNError, ValueError):
    """A report cannot be produced from the given trajectory."""


class ParseError(LinGNNError, ValueError):
    """A dataset file is malformed.

    Carries the offending file and 1-based line number so CLI messages can
    point at the exact location.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")
