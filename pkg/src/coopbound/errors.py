"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A constructor or operation received an out-of-range argument."""


class SingularNetworkError(RuntimeError):
    """An information matrix needed for a bound is not invertible.

    The message names the structural cause where one can be identified
    (no anchors, a component without anchors, degenerate anchor geometry).
    """


class SingularNPIError(SingularNetworkError):
    """A node's nominal position information block is not invertible."""


class ConvergenceError(RuntimeError):
    """An iterative series did not converge within its iteration cap.

    Attributes
    ----------
    partial : object
        The partial result accumulated before the cap was reached.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
