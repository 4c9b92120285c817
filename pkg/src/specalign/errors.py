"""Exception hierarchy shared by every module."""


class SpecAlignError(Exception):
    """Base class for all library errors."""


class ConfigError(SpecAlignError, ValueError):
    pass


class SizeError(SpecAlignError, ValueError):
    pass


class ParseError(SpecAlignError, ValueError):
    """Malformed input file. ``row``/``column`` are 1-based when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{', '.join(loc)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class PreconditionError(SpecAlignError, ValueError):
    pass


class ConnectivityError(SpecAlignError):
    """A node ended up with zero degree."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DegenerateScaleError(SpecAlignError):
    pass


class DegenerateGeometryError(SpecAlignError):
    """Anchor coordinates do not determine an affine map."""


class DegenerateSubspaceError(SpecAlignError):
    pass


class RobustFitError(SpecAlignError):
    pass


class NumericError(SpecAlignError, ArithmeticError):
    pass


class TrainingError(SpecAlignError):
    """Training aborted. ``iteration`` is the failing iteration when known."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration
