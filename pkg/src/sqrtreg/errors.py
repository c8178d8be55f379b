"""Exception types raised across the package."""


class SqrtRegError(Exception):
    """Base class for all package errors."""


class ZeroColumnError(SqrtRegError, ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column} of X is identically zero")


class DimensionMismatch(SqrtRegError, ValueError):
    pass


class InvalidRegime(SqrtRegError, ValueError):
    """A tuning formula is undefined for the given sizes / confidence level."""


class Unsupported(SqrtRegError, NotImplementedError):
    pass


class ParseError(SqrtRegError, ValueError):
    def __init__(self, line, msg):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class EmptyDataset(SqrtRegError, ValueError):
    pass


class FactorizationFailure(SqrtRegError, ArithmeticError):
    pass


class LineSearchStall(SqrtRegError, ArithmeticError):
    pass
