"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    """Base class for all domain errors raised by this package."""


class ParamsError(SimulationError):
    """Invalid physical parameters."""


class NegativeRate(ParamsError):
    pass


class InvalidFraction(ParamsError):
    pass


class NonzeroDetuning(ParamsError):
    pass


class IntegratorDiverged(SimulationError):
    pass


class InvariantViolation(SimulationError):
    pass


class BaselineDead(SimulationError):
    """The p=0 normalization run itself collapsed; the order parameter is undefined."""


class NoConvergence(SimulationError):
    pass


class ValidityViolated(SimulationError):
    """Reduced steady-state solution lies outside its own validity regime."""


class RegimeViolation(SimulationError):
    """Parameters outside the regime a formula or approximation assumes."""


class OutOfRange(SimulationError):
    """A formula produced a value outside its physically meaningful range."""


class SelfCheckFailed(SimulationError):
    """Two independent computations of the same quantity disagree."""


class UnexpectedRouthBranch(SimulationError):
    """A stability condition other than the constant coefficient binds at the threshold."""


class NoTransition(SimulationError):
    pass


class NoKnee(SimulationError):
    pass


class ConfigError(SimulationError):
    pass
