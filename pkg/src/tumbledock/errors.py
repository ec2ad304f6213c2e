"""Exception types raised across the package."""


class NonUnitQuaternion(ValueError):
    """A quaternion that must be unit-norm deviates beyond tolerance."""


class ZeroQuaternion(ValueError):
    """A quaternion too close to zero to be normalized."""


class NewtonDivergence(RuntimeError):
    """The algebraic Newton polish did not reach its tolerance."""


class StepRejected(RuntimeError):
    """An integration step produced non-finite values."""


class PropagationFailed(RuntimeError):
    """A trajectory propagation failed; ``time`` holds the failing step start."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class EvaluatorFailure(RuntimeError):
    """An NLP evaluator returned non-finite output."""


class DimensionMismatch(ValueError):
    """Array sizes do not match the problem dimensions."""


class ParseError(ValueError):
    """Scenario file could not be parsed.  ``field``/``line`` locate the problem."""

    def __init__(self, message, field=None, line=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.field = field
        self.line = line


class ValidationError(ValueError):
    """Scenario violates a named validation rule."""

    def __init__(self, rule, message=""):
        super().__init__(f"{rule}: {message}" if message else rule)
        self.rule = rule
