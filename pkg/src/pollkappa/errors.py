"""Exception hierarchy shared by the simulators and estimators."""


class PollKappaError(Exception):
    """Base class for runtime failures that the CLI maps to exit status 2."""


class BudgetExhausted(PollKappaError):
    """A single draw needed more service completions than its budget allows."""


class InstabilityError(PollKappaError):
    """Some exhaustive station violates its stability condition."""


class ZeroProductError(PollKappaError):
    """A random matrix product collapsed to the zero matrix."""

    def __init__(self, replica: int):
        super().__init__(f"matrix product is zero in replica {replica}")
        self.replica = replica


class InconclusiveKappa(PollKappaError):
    """Monte Carlo noise in s(x) hides the crossing of 1 over the whole bracket."""


class TruncationCapError(PollKappaError):
    """Series summation hit max_terms before the product norm fell below the floor."""


class DegenerateSampleError(PollKappaError, ValueError):
    pass


class InsufficientPointsError(PollKappaError, ValueError):
    pass


class InsufficientRangeError(PollKappaError, ValueError):
    pass
