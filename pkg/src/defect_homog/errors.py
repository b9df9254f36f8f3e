"""Exception hierarchy shared by all modules."""


class DefectHomogError(Exception):
    """Base class for library errors."""


class NonElliptic(DefectHomogError):
    pass


class SingularCell(DefectHomogError):
    pass


class MeshTooFine(DefectHomogError):
    pass


class ParseError(DefectHomogError):
    """Expression text could not be parsed.

    Carries the byte offset of the offending token and the set of tokens
    that would have been accepted there.
    """

    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        exp = ", ".join(self.expected) if self.expected else "?"
        super().__init__(f"{message} at offset {offset} (expected one of: {exp})")


class ModelError(DefectHomogError):
    """Well-formed expression that violates a model restriction."""


class EvalError(DefectHomogError):
    pass


class FactorizationFailure(DefectHomogError):
    pass


class NoConvergence(DefectHomogError):
    """Iteration did not converge; ``trace`` holds the observed ratios."""

    def __init__(self, message, residuals=(), factors=()):
        super().__init__(message)
        self.residuals = list(residuals)
        self.factors = list(factors)


class NotLinear(DefectHomogError):
    pass


class InsufficientPoints(DefectHomogError):
    pass


class MembershipViolation(DefectHomogError):
    pass


class ConfigError(DefectHomogError):
    pass
