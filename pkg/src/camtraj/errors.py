"""Exception types shared across the package."""


class CamTrajError(Exception):
    """Base class for all package errors."""


class InputError(CamTrajError, ValueError):
    """Malformed or inconsistent input data."""


class ParseError(InputError):
    """A text record could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CorruptFileError(InputError):
    """Binary container failed a magic, length, version or CRC check."""


class DegenerateGeometryError(CamTrajError):
    """Geometry does not constrain the requested quantity (collinear points, zero scale, ...)."""


class DisconnectedFrameError(InputError):
    def __init__(self, frame):
        self.frame = frame
        super().__init__(f"frame {frame} is not connected to the reference frame by any pair")
