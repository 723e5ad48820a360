"""Exception hierarchy shared across the package.

CLI exit codes are derived from these classes (see cli.EXIT_CODES).
"""


class DetailFuseError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(DetailFuseError):
    """Invalid boxes, cover configs, or degenerate geometry inputs."""


class ShapeError(DetailFuseError):
    """Shape-incompatible operands in a tensor op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class BankFormatError(DetailFuseError):
    """Corrupt or mismatched feature-bank / checkpoint files."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(DetailFuseError):
    """Invalid run/world/model configuration."""


class WorldError(DetailFuseError):
    """Synthetic world generation failure (e.g. infeasible packing)."""


class StageError(DetailFuseError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
