"""Exception types raised by the samplers, decompositions and file readers."""


class NDPPError(Exception):
    """Base class for errors raised by this package."""


class NumericalError(NDPPError, ArithmeticError):
    """A quantity left its admissible range beyond the stated tolerance."""


class SingularKernelError(NumericalError):
    """A linear system required by a kernel computation is singular.

    ``condition`` holds the estimated condition number of the offending
    matrix (``inf`` when the solver could not factor it at all).
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class DegenerateConditionalError(NumericalError):
    """A conditional probability needed as a divisor is numerically zero."""


class DominationViolation(NumericalError):
    """An acceptance ratio exceeded one, i.e. the proposal failed to dominate."""


class RejectionBudgetExceeded(NDPPError, RuntimeError):
    """Rejection sampling ran out of rounds before accepting a proposal."""

    def __init__(self, rounds, max_acceptance=0.0):
        super().__init__(
            f"no proposal accepted after {rounds} rounds "
            f"(largest acceptance probability seen: {max_acceptance:.3e})"
        )
        self.rounds = rounds
        self.rejections = rounds
        self.max_acceptance = max_acceptance


class PSDViolation(NumericalError):
    """A principal minor came out negative beyond tolerance."""


class FormatError(NDPPError, ValueError):
    """A model, tree or basket file could not be parsed.

    Binary readers fill ``offset`` (byte position), text readers fill
    ``line`` (1-based).
    """

    def __init__(self, message, *, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" at {', '.join(where)}" if where else ""
        super().__init__(message + suffix)
        self.offset = offset
        self.line = line


class TrainingDiverged(NDPPError, RuntimeError):
    """The learning objective became non-finite.

    ``params`` holds the last parameters with a finite objective.
    """

    def __init__(self, message, params):
        super().__init__(message)
        self.params = params
