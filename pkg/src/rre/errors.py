"""Exception hierarchy shared by every module of the package."""


class RREError(Exception):
    """Base class for all package errors."""


class NumericalError(RREError):
    """A computation produced NaN or Inf."""

    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"non-finite value produced at node {node!r}")


class ShapeError(RREError, ValueError):
    pass


class DistributionError(RREError, ValueError):
    pass


class SchemaError(RREError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParseError(RREError, ValueError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"cannot parse {value!r} as float at row {row}, column {column!r}")


class SplitError(RREError, ValueError):
    pass


class ActionError(RREError, ValueError):
    pass


class BufferError(RREError):  # noqa: A001 - shadows the builtin on purpose
    """Raised when sampling from an empty replay buffer."""


class TrainingError(RREError):
    pass


class ConfigError(RREError, ValueError):
    pass


class CheckpointError(RREError):
    pass
