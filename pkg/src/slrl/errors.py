"""Exception types raised by the slrl library.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3, file/container problems exit 4.
"""


class SlrlError(Exception):
    """Base class for all slrl errors."""


class ParameterError(SlrlError):
    """A scalar argument is out of its valid range."""


class ShapeError(SlrlError):
    """Operand shapes are inconsistent."""


class GeometryError(SlrlError):
    """Convolution geometry does not match the supplied input."""


class ConfigError(SlrlError):
    """Malformed or inconsistent pipeline/CLI configuration."""


class MalformedFileError(SlrlError):
    """An array file could not be parsed (bad magic, header, or truncated payload)."""


class ArrayFormatError(SlrlError):
    """An array file parsed but uses an unsupported dtype, layout, or rank."""


class CorruptContainerError(SlrlError):
    """A compressed-layer container failed its checksum."""


class ContainerVersionError(SlrlError):
    """A compressed-layer container was written by an incompatible format version."""


class NumericalError(SlrlError):
    """Base class for solver failures."""


class BlowupError(NumericalError):
    """An iterate became non-finite.

    Carries the iteration index and a snapshot of the iterates for
    post-mortem inspection.
    """

    def __init__(self, message, iteration=None, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


class DivergenceError(NumericalError):
    """The inner solver's objective ran away.

    ``trace`` holds the per-epoch objective values observed before the
    failure was declared.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class SvdError(NumericalError):
    """The SVD backend failed to converge."""

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix
