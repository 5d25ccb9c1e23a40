"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when user-supplied options are inconsistent or out of range."""


class DegenerateWeightsError(RuntimeError):
    """All particle log-weights are -inf: the sampler has collapsed."""


class DivergenceError(RuntimeError):
    """A particle or chain produced a non-finite state or gradient.

    The offending row index is kept in ``index`` when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NonFiniteValueError(RuntimeError):
    """A test function, potential or estimator term evaluated non-finite.

    ``index`` identifies the offending particle row when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class WeightOverflowError(RuntimeError):
    """An incremental log-weight evaluated non-finite."""
