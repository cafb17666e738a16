"""Exception hierarchy shared by the engine and the command line."""


class PifError(Exception):
    """Base class for all errors raised by pifnet."""

    exit_code = 1


class ConfigError(PifError, ValueError):
    """Invalid configuration, hyperparameter or command-line option."""

    exit_code = 2


class ShapeError(ConfigError):
    """Tensor shapes or layer extents do not chain."""

    exit_code = 3


class FormatError(PifError, OSError):
    """Malformed volume file or manifest."""

    exit_code = 4


class NumericalError(PifError, FloatingPointError):
    """A NaN or infinity appeared in a tensor or gradient."""

    exit_code = 5


class GraphError(PifError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, reused graph)."""

    exit_code = 1


class LeakageError(PifError, RuntimeError):
    """A subject appears in more than one split or the test set was reread."""

    exit_code = 1
