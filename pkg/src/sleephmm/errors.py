"""Exception hierarchy shared by the library and the CLI."""


class SleepHMMError(Exception):
    """Base class for all errors raised by :mod:`sleephmm`."""


class InvalidInputError(SleepHMMError, ValueError):
    """Input data or parameters violate a documented precondition."""


class NumericalError(SleepHMMError, ArithmeticError):
    """A numerical routine could not produce a finite result."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DegenerateStateError(NumericalError):
    """A hidden state received zero total responsibility during EM."""

    def __init__(self, state):
        super().__init__(f"state {state} received zero total responsibility", state=state)


class WeekRejected(SleepHMMError):
    """A week does not have enough days of both types to compute weekly indicators."""
