"""Exception hierarchy shared across the package."""


class OutageMaskError(Exception):
    """Base class for all errors raised by this package."""


class CaseParseError(OutageMaskError):
    """Malformed case text. Carries the 1-based line and column."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class CaseValidationError(OutageMaskError):
    """Parsed case violates a structural invariant."""


class UnknownLineError(OutageMaskError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TopologyError(OutageMaskError):
    """Network is disconnected, or would be after the requested change."""


class DegenerateOutageError(TopologyError):
    """Outage of an islanding line: the Thevenin reactance equals the line reactance."""


class UnbalancedInjectionError(OutageMaskError):
    pass


class UnobservableTargetError(OutageMaskError):
    """The PMU set cannot see the target line's outage at all."""


class InfeasibleAttackError(OutageMaskError):
    pass


class UnboundedProblemError(OutageMaskError):
    pass


class IterationLimitError(OutageMaskError):
    """Solver hit its iteration cap; ``best`` holds the best point found so far."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RankDeficientError(OutageMaskError):
    pass
