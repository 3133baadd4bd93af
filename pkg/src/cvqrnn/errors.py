"""Exception types shared across the package."""


class NumericalInconsistency(ArithmeticError):
    """A computed quantity violated a numerical sanity check."""


class NumericalFailure(ArithmeticError):
    """A loss or gradient evaluation produced a non-finite value."""

    def __init__(self, message, index=None, epoch=None):
        super().__init__(message)
        self.index = index
        self.epoch = epoch


class FormatError(ValueError):
    """Input file or manifest could not be parsed."""
