"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid layer chain, experiment field, or estimator parameter."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in a forward pass or loss.

    Attributes
    ----------
    layer : int or None
        Index of the layer whose output first became non-finite.
    epoch : int or None
        Training epoch in which the problem surfaced, when known.
    """

    def __init__(self, message, layer=None, epoch=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class InfeasibleBankError(ValueError):
    """Requested more distinct masks than the layer can realize."""


class BankTimeoutError(RuntimeError):
    """Rejection sampling hit its iteration cap before filling the bank."""


class IDXFormatError(ValueError):
    """Bad magic number or inconsistent header in an IDX file."""
