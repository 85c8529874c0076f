"""Exception types shared across the package."""


class Smc2Error(Exception):
    pass


class ParameterError(Smc2Error, ValueError):
    pass


class ConfigurationError(Smc2Error):
    pass


class UnsupportedModelError(Smc2Error):
    pass


class JournalCorruptionError(Smc2Error):
    pass


class DegenerateWeightsError(Smc2Error):
    """All particle weights are zero (log-weights -inf)."""

    def __init__(self, message, theta=None, t=None):
        super().__init__(message)
        self.theta = theta
        self.t = t


class FatalDegeneracyError(Smc2Error):
    """Every island of the outer sampler has zero weight; carries the partial state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
