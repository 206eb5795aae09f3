"""Exception hierarchy shared by every adan module."""


class AdanError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AdanError, ValueError):
    pass


class LabelError(AdanError, ValueError):
    pass


class DegenerateBatchError(AdanError, ValueError):
    pass


class NumericError(AdanError, FloatingPointError):
    pass


class ConfigError(AdanError, ValueError):
    pass


class ContractError(AdanError, ValueError):
    pass


class ModeError(AdanError, ValueError):
    pass


class EmptyCorpusError(AdanError, ValueError):
    pass


class DivergedError(NumericError):
    pass


class FormatError(AdanError, ValueError):
    """Malformed input file; carries the path and 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class DimensionError(AdanError, ValueError):
    pass


class CheckpointError(AdanError, ValueError):
    pass
